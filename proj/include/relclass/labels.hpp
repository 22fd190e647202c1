#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <optional>
#include <string_view>

namespace relclass {

// Enumerator order is the lexicographic order of the label names, so the
// lowest index is also the lexicographically first label (tie-break rule).
enum class Label : std::uint8_t { Compare, ModelFeature, PartWhole, Result, Topic, Usage };

inline constexpr std::size_t kNumLabels = 6;

inline constexpr std::array<Label, kNumLabels> kAllLabels{
    Label::Compare, Label::ModelFeature, Label::PartWhole,
    Label::Result,  Label::Topic,        Label::Usage};

std::string_view label_name(Label label);

std::optional<Label> parse_label(std::string_view name);

// Only COMPARE is symmetric.
constexpr bool is_symmetric(Label label) { return label == Label::Compare; }

constexpr std::size_t label_index(Label label) { return static_cast<std::size_t>(label); }

constexpr Label label_at(std::size_t index) { return static_cast<Label>(index); }

// Probability (or score) per label, indexed by label_index().
using ClassDistribution = std::array<double, kNumLabels>;

// Highest-scoring label; ties go to the lowest index.
Label argmax_label(const ClassDistribution& scores);

}  // namespace relclass
