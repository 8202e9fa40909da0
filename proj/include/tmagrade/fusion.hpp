#pragma once

#include <span>

#include "tmagrade/types.hpp"

namespace tma {

/// One-hot six-channel encoding; throws on codes outside 0..5.
SoftLabelMap encode_one_hot(const GradeLabelMap& labels);

/// Unweighted mean of the annotators' one-hot encodings.
///
/// Each value is the correctly rounded float of count/k, so per-pixel sums
/// are exactly 1 for k ≤ 6. "Ignored" votes stay in the average as channel 5.
SoftLabelMap fuse_annotations(std::span<const GradeLabelMap> maps);

}  // namespace tma
