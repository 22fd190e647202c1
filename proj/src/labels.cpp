#include "relclass/labels.hpp"

namespace relclass {

namespace {
constexpr std::array<std::string_view, kNumLabels> kNames{
    "COMPARE", "MODEL-FEATURE", "PART_WHOLE", "RESULT", "TOPIC", "USAGE"};
}

std::string_view label_name(Label label) { return kNames[label_index(label)]; }

std::optional<Label> parse_label(std::string_view name) {
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    if (kNames[i] == name) return label_at(i);
  }
  return std::nullopt;
}

Label argmax_label(const ClassDistribution& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumLabels; ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return label_at(best);
}

}  // namespace relclass
