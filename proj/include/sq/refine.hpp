#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sq/cluster.hpp"
#include "sq/gateway.hpp"
#include "sq/image.hpp"
#include "sq/prompts.hpp"
#include "sq/renderer.hpp"
#include "sq/scene.hpp"

namespace sq {

struct PerturbParams {
  double delta = 0.15;  // right-axis shift, fraction of center-to-centroid
  double zeta = 0.25;   // dolly toward/away from the centroid, same fraction
  bool focal_zoom = false;  // zoom by scaling fx/fy instead of moving
};

// Candidate views for one instance, in the fixed order
// [initial, left, right, zoom_in, zoom_out]. Perturbed poses carry id -1.
struct CandidateSet {
  int32_t instance_id = 0;
  std::vector<Camera> views;
  std::vector<Image> renders;
};

inline constexpr int kCandidateViews = 5;

struct InstanceAnswer {
  std::vector<std::string> per_view_answers;  // one per candidate view
  int selected_view_index = 0;
};

struct AnswerRecord {
  std::string question;
  std::vector<InstanceAnswer> instances;  // one per cluster
  std::string initial_answer;
  int initial_image_index = 0;
  std::string final_answer;
  int final_image_index = 0;
  std::string verified_answer;
  int verification_choice = 0;  // 0 = initial answer, 1 = final answer
};

// The four perturbed poses for each initial view, grouped per instance:
// K = 4L poses [left, right, zoom_in, zoom_out] * L. Shifts move the center
// by +-delta*dist along the camera right axis with orientation unchanged;
// zoom dollies the center along the segment to the cluster centroid by
// +-zeta. A degenerate center-to-centroid distance (< 1e-6) substitutes the
// initial pose with a warning.
std::vector<Camera> perturb_views(std::span<const Camera> initial,
                                  const ClusterSet& clusters,
                                  const PerturbParams& params = {});

// Initial view plus its four perturbations, rendered.
CandidateSet make_candidate_set(const Scene& scene, const Camera& initial,
                                const Eigen::Vector3d& centroid,
                                int32_t instance_id,
                                const PerturbParams& params = {},
                                const RenderOptions& opts = {});

// One single-image visual-QA call per candidate view (sequentially, so the
// call ledger stays ordered), then one selection call over the five answers.
// An unparseable selection gets one reprompt, then falls back to index 0.
InstanceAnswer judge_views(const CandidateSet& cands,
                           const std::string& question, ChatGateway& gw,
                           const PromptLibrary& prompts,
                           const std::string& vqa_model,
                           const std::string& select_model);

struct ViewAnswer {
  int image_index = 0;
  std::string answer;
};

// One call carrying every render; the reply must name the image it grounds
// the answer in. Format violations get one reprompt, then the raw reply is
// kept with image_index 0.
ViewAnswer answer_with_views(std::span<const Image> renders,
                             const std::string& question, ChatGateway& gw,
                             const PromptLibrary& prompts,
                             const std::string& model);

// Chooses between candidate 0 (initial views) and 1 (final views). Both
// answers must be non-empty. Unparseable twice falls back to 0.
int verify_answers(const std::string& question, const std::string& answer0,
                   const std::string& answer1, ChatGateway& gw,
                   const PromptLibrary& prompts, const std::string& model);

struct RefineParams {
  PerturbParams perturb;
  RenderOptions render;
  std::string vqa_model = "vqa";
  std::string select_model = "select";
  std::string answer_model = "answer";
  std::string verify_model = "verify";
};

struct QuestionRun {
  AnswerRecord record;
  std::vector<CandidateSet> candidates;  // one per instance
};

// Full refinement for one question: candidate sets around the initial views,
// an answer from the initial views, the judged final views, an answer from
// those, and the verification verdict between the two.
QuestionRun answer_question(const Scene& scene, const ClusterSet& clusters,
                            std::span<const int32_t> initial_view_ids,
                            const std::string& question, ChatGateway& gw,
                            const PromptLibrary& prompts,
                            const RefineParams& params = {});

// Stable two-space-indented JSON, keys sorted, trailing newline.
std::string to_json(const AnswerRecord& rec);

}  // namespace sq
