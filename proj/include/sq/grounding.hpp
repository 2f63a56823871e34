#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sq/gateway.hpp"
#include "sq/kernels.hpp"
#include "sq/prompts.hpp"
#include "sq/scene.hpp"

namespace sq {

struct LabeledPoint {
  Eigen::Vector3d p;
  int32_t instance = 0;
};

// Per-gaussian instance labels, -1 where unlabeled.
struct InstanceLabeling {
  std::vector<int32_t> labels;
  std::string source;  // "distilled" | "file"
};

struct SegmentationResult {
  std::vector<int32_t> predicted;
  int32_t answer_camera = -1;  // -1 for a novel (perturbed) pose
  std::optional<double> iou;   // absent without ground truth
};

// Activated gaussians whose mean projects inside the image rectangle with
// near < depth < far. Sorted ascending, subset of `activated`, idempotent.
std::vector<int32_t> frustum_filter(const Scene& scene,
                                    std::span<const int32_t> activated,
                                    const Camera& pose);

// Hard-nearest Mahalanobis vote per point (covariances regularized by
// 1e-8 on the diagonal), then per-gaussian argmax over the accumulated
// instance votes; vote ties resolve to the smallest instance id.
InstanceLabeling distill_gt(std::span<const LabeledPoint> points,
                            const Scene& scene,
                            const kern::KernelTable* kernels = nullptr);

std::vector<int32_t> ids_with_label(const InstanceLabeling& labeling,
                                    int32_t instance);

// min(v_j / v90, 1) clipped to [0, 1], where v_j is scale volume times
// opacity and v90 the linearly interpolated 90th percentile of all v_j.
// A zero percentile yields all zeros with a warning.
std::vector<double> normalized_volume(const Scene& scene);

// Volume-weighted IoU over id sets; an empty (or zero-weight) union is 0.
double miou_3d(std::span<const int32_t> pred, std::span<const int32_t> gt,
               std::span<const double> weights);

// 100 * |{iou > k/100}| / |ious|.
double acc_at_k(std::span<const double> ious, double k_percent);

struct LlmMatchResult {
  double score = 0.0;  // 100 * (grade - 1) / 4
  int grade = 0;       // 1..5, 0 when unparseable
  bool parsed = false;
};

// Judge-graded semantic agreement on the 1..5 scale; an unparseable grade
// after one reprompt scores 0 and is flagged.
LlmMatchResult llm_match(const std::string& question,
                         const std::string& ground_truth,
                         const std::string& predicted, ChatGateway& gw,
                         const PromptLibrary& prompts,
                         const std::string& model);

// Binary little-endian PLY with float x/y/z and an integer "instance"
// property per vertex.
std::vector<LabeledPoint> load_labeled_points(const std::string& path);
void save_labeled_points(const std::string& path,
                         std::span<const LabeledPoint> points);

}  // namespace sq
