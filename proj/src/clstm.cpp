#include "relclass/clstm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "relclass/features.hpp"
#include "relclass/kernels.hpp"

namespace relclass::clstm {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void append(Sequence& seq, std::span<const double> v) {
  seq.values.insert(seq.values.end(), v.begin(), v.end());
  ++seq.length;
}

// Pre-activation conv outputs, step-major.
void conv_preactivation(std::span<const double> values, std::size_t dim, std::span<const double> filters,
                        std::span<const double> bias, std::size_t width, std::size_t stride, std::span<double> out) {
  const std::size_t k = bias.size();
  const std::size_t window = width * dim;
  const std::size_t steps = conv_steps(values.size() / dim, width, stride);
  for (std::size_t j = 0; j < steps; ++j) {
    kernels::gemv(filters, values.subspan(j * stride * dim, window), bias, out.subspan(j * k, k));
  }
}

// One LSTM step. gates receives the activated [i | f | o | g] values.
void lstm_step(const LstmWeights& w, std::span<const double> x, std::span<const double> h_prev,
               std::span<const double> c_prev, std::span<double> gates, std::span<double> c,
               std::span<double> tanh_c, std::span<double> h) {
  const std::size_t H = w.hidden;
  kernels::gemv(w.input, x, w.bias, gates);
  for (std::size_t r = 0; r < 4 * H; ++r) gates[r] += kernels::dot(w.recurrent.subspan(r * H, H), h_prev);
  for (std::size_t u = 0; u < H; ++u) {
    const double ig = sigmoid(gates[u]);
    const double fg = sigmoid(gates[H + u]);
    const double og = sigmoid(gates[2 * H + u]);
    const double gg = std::tanh(gates[3 * H + u]);
    gates[u] = ig;
    gates[H + u] = fg;
    gates[2 * H + u] = og;
    gates[3 * H + u] = gg;
    c[u] = fg * c_prev[u] + ig * gg;
    tanh_c[u] = std::tanh(c[u]);
    h[u] = og * tanh_c[u];
  }
}

void check_lstm(const LstmWeights& w, std::size_t input_size) {
  const std::size_t H = w.hidden;
  if (H == 0 || w.input.size() != 4 * H * input_size || w.recurrent.size() != 4 * H * H || w.bias.size() != 4 * H) {
    throw std::invalid_argument("lstm: weight shapes do not match hidden/input sizes");
  }
}

ClassDistribution softmax(std::span<const double> logits) {
  ClassDistribution p{};
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    p[c] = std::exp(logits[c] - mx);
    total += p[c];
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

Sequence build_sequence(const RelationInstance& inst, const EmbeddingTable& table, const FrequencyTable& freq,
                        std::size_t min_lemma_count) {
  Sequence seq{table.dim(), 0, {}};
  append(seq, phrase_vector(table, embedding_keys(inst.span_tokens(inst.start_entity()))));
  const auto context = filter_context(extract_context(inst), freq, min_lemma_count);
  for (const auto& key : embedding_keys(context)) append(seq, lookup(table, key));
  append(seq, phrase_vector(table, embedding_keys(inst.span_tokens(inst.end_entity()))));
  return seq;
}

Sequence pad(const Sequence& seq, std::size_t max_len) {
  if (seq.length > max_len) {
    throw std::invalid_argument(fmt::format("pad: sequence length {} exceeds max_len {}", seq.length, max_len));
  }
  Sequence out = seq;
  out.values.resize(max_len * seq.dim, 0.0);
  out.length = max_len;
  return out;
}

std::size_t conv_steps(std::size_t max_len, std::size_t width, std::size_t stride) {
  if (width == 0 || stride == 0 || width > max_len) {
    throw std::invalid_argument(fmt::format("conv: invalid width {} / stride {} for length {}", width, stride, max_len));
  }
  return (max_len - width) / stride + 1;
}

FeatureMaps conv1d(const Sequence& padded, std::span<const double> filters, std::span<const double> bias,
                   std::size_t width, std::size_t stride) {
  const std::size_t k = bias.size();
  if (filters.size() != k * width * padded.dim) throw std::invalid_argument("conv1d: filter shape mismatch");
  if (padded.values.size() != padded.length * padded.dim) throw std::invalid_argument("conv1d: bad sequence");
  FeatureMaps maps{conv_steps(padded.length, width, stride), k, {}};
  maps.values.resize(maps.steps * k);
  conv_preactivation(padded.values, padded.dim, filters, bias, width, stride, maps.values);
  for (double& v : maps.values) v = std::max(v, 0.0);
  return maps;
}

std::vector<std::vector<double>> split_maps(const FeatureMaps& maps) {
  std::vector<std::vector<double>> out;
  out.reserve(maps.steps);
  for (std::size_t j = 0; j < maps.steps; ++j) {
    const auto s = maps.step(j);
    out.emplace_back(s.begin(), s.end());
  }
  return out;
}

std::vector<double> lstm_forward(std::span<const std::vector<double>> inputs, const LstmWeights& weights) {
  if (inputs.empty()) throw std::invalid_argument("lstm_forward: empty sequence");
  check_lstm(weights, inputs.front().size());
  const std::size_t H = weights.hidden;
  std::vector<double> h(H, 0.0), c(H, 0.0), h_next(H), c_next(H), tanh_c(H), gates(4 * H);
  for (const auto& x : inputs) {
    if (x.size() != inputs.front().size()) throw std::invalid_argument("lstm_forward: ragged inputs");
    lstm_step(weights, x, h, c, gates, c_next, tanh_c, h_next);
    std::swap(h, h_next);
    std::swap(c, c_next);
  }
  return h;
}

std::vector<double> make_dropout_mask(std::size_t size, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  std::vector<double> mask(size, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution draw(keep);
  for (double& m : mask) m = draw(rng) ? 1.0 / keep : 0.0;
  return mask;
}

ClassDistribution classify(std::span<const double> h, std::span<const double> weights, std::span<const double> bias,
                           std::span<const double> dropout_mask) {
  if (weights.size() != kNumLabels * h.size() || bias.size() != kNumLabels) {
    throw std::invalid_argument("classify: softmax layer shape mismatch");
  }
  std::vector<double> hd(h.begin(), h.end());
  if (!dropout_mask.empty()) {
    if (dropout_mask.size() != h.size()) throw std::invalid_argument("classify: dropout mask size mismatch");
    for (std::size_t u = 0; u < hd.size(); ++u) hd[u] *= dropout_mask[u];
  }
  std::array<double, kNumLabels> logits{};
  kernels::gemv(weights, hd, bias, logits);
  return softmax(logits);
}

double cross_entropy(const ClassDistribution& scores, Label gold) { return -std::log(scores[label_index(gold)]); }

std::string_view group_name(Group group) {
  static constexpr std::array<std::string_view, kNumGroups> kNames{
      "conv.weight", "conv.bias", "lstm.input_weight", "lstm.recurrent_weight", "lstm.bias", "softmax.weight",
      "softmax.bias"};
  return kNames[static_cast<std::size_t>(group)];
}

namespace {

std::array<std::size_t, kNumGroups + 1> layout(const Shape& s) {
  const std::size_t H = s.hidden;
  const std::array<std::size_t, kNumGroups> sizes{
      s.num_filters * s.filter_width * s.embed_dim, s.num_filters, 4 * H * s.num_filters, 4 * H * H, 4 * H,
      kNumLabels * H, kNumLabels};
  std::array<std::size_t, kNumGroups + 1> offsets{};
  for (std::size_t g = 0; g < kNumGroups; ++g) offsets[g + 1] = offsets[g] + sizes[g];
  return offsets;
}

void check_shape(const Shape& s) {
  if (s.embed_dim == 0 || s.num_filters == 0 || s.hidden == 0) {
    throw std::invalid_argument("C-LSTM shape needs positive embedding, filter and hidden sizes");
  }
  (void)s.steps();  // validates width/stride against max_len
}

// Activations of one example kept for back-propagation.
struct Trace {
  std::vector<double> conv_pre;  // m x k
  std::vector<double> conv_out;  // m x k
  std::vector<double> gates;     // m x 4H, activated
  std::vector<double> cells;     // m x H
  std::vector<double> tanh_c;    // m x H
  std::vector<double> hidden;    // m x H
  std::vector<double> h_drop;    // H
  ClassDistribution probs{};
};

}  // namespace

Network::Network(Shape shape, std::vector<double> params) : shape_(shape), params_(std::move(params)) {
  check_shape(shape_);
  offsets_ = layout(shape_);
  if (params_.size() != offsets_.back()) {
    throw std::invalid_argument(fmt::format("C-LSTM expects {} parameters, got {}", offsets_.back(), params_.size()));
  }
}

std::size_t Network::parameter_count(const Shape& shape) { return layout(shape).back(); }

Network Network::initialize(const Shape& shape, std::uint64_t seed) {
  check_shape(shape);
  std::vector<double> params(parameter_count(shape), 0.0);
  Network net(shape, std::move(params));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.1, 0.1);
  for (Group g : {Group::ConvWeight, Group::LstmInput, Group::LstmRecurrent, Group::OutWeight}) {
    for (double& w : net.group(g)) w = uni(rng);
  }
  auto bias = net.group(Group::LstmBias);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(shape.hidden),
            bias.begin() + static_cast<std::ptrdiff_t>(2 * shape.hidden), 1.0);
  return net;
}

std::size_t Network::group_offset(Group g) const { return offsets_[static_cast<std::size_t>(g)]; }

std::span<const double> Network::group(Group g) const {
  const auto i = static_cast<std::size_t>(g);
  return std::span<const double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::span<double> Network::group(Group g) {
  const auto i = static_cast<std::size_t>(g);
  return std::span<double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

LstmWeights Network::lstm_weights() const {
  return {group(Group::LstmInput), group(Group::LstmRecurrent), group(Group::LstmBias), shape_.hidden};
}

namespace {

void forward(const Network& net, std::span<const double> input, std::span<const double> mask, Trace& tr) {
  const Shape& s = net.shape();
  const std::size_t k = s.num_filters;
  const std::size_t H = s.hidden;
  const std::size_t m = s.steps();
  if (input.size() != s.max_len * s.embed_dim) throw std::invalid_argument("C-LSTM input has the wrong size");

  tr.conv_pre.assign(m * k, 0.0);
  conv_preactivation(input, s.embed_dim, net.group(Group::ConvWeight), net.group(Group::ConvBias), s.filter_width, s.stride,
                     tr.conv_pre);
  tr.conv_out.resize(m * k);
  for (std::size_t i = 0; i < m * k; ++i) tr.conv_out[i] = std::max(tr.conv_pre[i], 0.0);

  tr.gates.assign(m * 4 * H, 0.0);
  tr.cells.assign(m * H, 0.0);
  tr.tanh_c.assign(m * H, 0.0);
  tr.hidden.assign(m * H, 0.0);
  const std::vector<double> zeros(H, 0.0);
  const auto w = net.lstm_weights();
  for (std::size_t t = 0; t < m; ++t) {
    const std::span<const double> h_prev = t == 0 ? std::span<const double>(zeros)
                                                  : std::span<const double>(tr.hidden).subspan((t - 1) * H, H);
    const std::span<const double> c_prev = t == 0 ? std::span<const double>(zeros)
                                                  : std::span<const double>(tr.cells).subspan((t - 1) * H, H);
    lstm_step(w, std::span<const double>(tr.conv_out).subspan(t * k, k), h_prev, c_prev,
              std::span<double>(tr.gates).subspan(t * 4 * H, 4 * H), std::span<double>(tr.cells).subspan(t * H, H),
              std::span<double>(tr.tanh_c).subspan(t * H, H), std::span<double>(tr.hidden).subspan(t * H, H));
  }
  const auto h_last = std::span<const double>(tr.hidden).subspan((m - 1) * H, H);
  tr.h_drop.assign(h_last.begin(), h_last.end());
  if (!mask.empty()) {
    for (std::size_t u = 0; u < H; ++u) tr.h_drop[u] *= mask[u];
  }
  tr.probs = classify(tr.h_drop, net.group(Group::OutWeight), net.group(Group::OutBias));
}

void backward(const Network& net, std::span<const double> input, std::span<const double> mask, Label gold,
              double scale, const Trace& tr, std::span<double> grad) {
  const Shape& s = net.shape();
  const std::size_t k = s.num_filters;
  const std::size_t H = s.hidden;
  const std::size_t m = s.steps();
  const std::size_t window = s.filter_width * s.embed_dim;
  const auto sub = [&](Group g) {
    const auto off = net.group_offset(g);
    return grad.subspan(off, net.group(g).size());
  };
  auto g_conv_w = sub(Group::ConvWeight);
  auto g_conv_b = sub(Group::ConvBias);
  auto g_w = sub(Group::LstmInput);
  auto g_u = sub(Group::LstmRecurrent);
  auto g_b = sub(Group::LstmBias);
  auto g_out_w = sub(Group::OutWeight);
  auto g_out_b = sub(Group::OutBias);
  const auto out_w = net.group(Group::OutWeight);
  const auto lstm_w = net.group(Group::LstmInput);
  const auto lstm_u = net.group(Group::LstmRecurrent);

  // Softmax + cross-entropy.
  std::vector<double> dh(H, 0.0);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const double dlogit = (tr.probs[c] - (c == label_index(gold) ? 1.0 : 0.0)) * scale;
    g_out_b[c] += dlogit;
    kernels::axpy(dlogit, tr.h_drop, g_out_w.subspan(c * H, H));
    kernels::axpy(dlogit, out_w.subspan(c * H, H), dh);
  }
  if (!mask.empty()) {
    for (std::size_t u = 0; u < H; ++u) dh[u] *= mask[u];
  }

  std::vector<double> dc(H, 0.0), da(4 * H), dx(k), dh_prev(H);
  const std::vector<double> zeros(H, 0.0);
  for (std::size_t t = m; t-- > 0;) {
    const auto gates = std::span<const double>(tr.gates).subspan(t * 4 * H, 4 * H);
    const auto tc = std::span<const double>(tr.tanh_c).subspan(t * H, H);
    const std::span<const double> c_prev =
        t == 0 ? std::span<const double>(zeros) : std::span<const double>(tr.cells).subspan((t - 1) * H, H);
    const std::span<const double> h_prev =
        t == 0 ? std::span<const double>(zeros) : std::span<const double>(tr.hidden).subspan((t - 1) * H, H);
    for (std::size_t u = 0; u < H; ++u) {
      const double ig = gates[u], fg = gates[H + u], og = gates[2 * H + u], gg = gates[3 * H + u];
      const double dcu = dc[u] + dh[u] * og * (1.0 - tc[u] * tc[u]);
      da[u] = dcu * gg * ig * (1.0 - ig);
      da[H + u] = dcu * c_prev[u] * fg * (1.0 - fg);
      da[2 * H + u] = dh[u] * tc[u] * og * (1.0 - og);
      da[3 * H + u] = dcu * ig * (1.0 - gg * gg);
      dc[u] = dcu * fg;
    }
    const auto x = std::span<const double>(tr.conv_out).subspan(t * k, k);
    std::fill(dx.begin(), dx.end(), 0.0);
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      g_b[r] += d;
      kernels::axpy(d, x, g_w.subspan(r * k, k));
      kernels::axpy(d, h_prev, g_u.subspan(r * H, H));
      kernels::axpy(d, lstm_w.subspan(r * k, k), dx);
      kernels::axpy(d, lstm_u.subspan(r * H, H), dh_prev);
    }
    std::swap(dh, dh_prev);

    // ReLU and convolution for step t.
    const auto pre = std::span<const double>(tr.conv_pre).subspan(t * k, k);
    const auto win = input.subspan(t * s.stride * s.embed_dim, window);
    for (std::size_t i = 0; i < k; ++i) {
      if (pre[i] <= 0.0 || dx[i] == 0.0) continue;
      g_conv_b[i] += dx[i];
      kernels::axpy(dx[i], win, g_conv_w.subspan(i * window, window));
    }
  }
}

void check_batch(const Network& net, std::span<const Example> batch, std::span<const std::vector<double>> masks) {
  if (batch.empty()) throw std::invalid_argument("C-LSTM batch is empty");
  if (!masks.empty() && masks.size() != batch.size()) throw std::invalid_argument("one dropout mask per example");
  for (const auto& mk : masks) {
    if (mk.size() != net.shape().hidden) throw std::invalid_argument("dropout mask has the wrong size");
  }
}

double l2_term(const Network& net, double l2_scale) {
  const auto w = net.group(Group::OutWeight);
  return l2_scale * 0.5 * kernels::dot(w, w);
}

}  // namespace

ClassDistribution Network::predict(std::span<const double> padded_input) const {
  Trace tr;
  forward(*this, padded_input, {}, tr);
  return tr.probs;
}

double Network::loss(std::span<const Example> batch, std::span<const std::vector<double>> masks,
                     double l2_scale) const {
  check_batch(*this, batch, masks);
  Trace tr;
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    forward(*this, batch[b].input, masks.empty() ? std::span<const double>{} : masks[b], tr);
    total += cross_entropy(tr.probs, batch[b].label);
  }
  return total / static_cast<double>(batch.size()) + l2_term(*this, l2_scale);
}

double Network::loss_and_gradient(std::span<const Example> batch, std::span<const std::vector<double>> masks,
                                  double l2_scale, std::span<double> grad) const {
  check_batch(*this, batch, masks);
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has the wrong size");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  Trace tr;
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto mask = masks.empty() ? std::span<const double>{} : std::span<const double>(masks[b]);
    forward(*this, batch[b].input, mask, tr);
    total += cross_entropy(tr.probs, batch[b].label);
    backward(*this, batch[b].input, mask, batch[b].label, scale, tr, grad);
  }
  if (l2_scale != 0.0) {
    const auto off = group_offset(Group::OutWeight);
    const auto w = group(Group::OutWeight);
    kernels::axpy(l2_scale, w, grad.subspan(off, w.size()));
  }
  return total * scale + l2_term(*this, l2_scale);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

}  // namespace relclass::clstm
