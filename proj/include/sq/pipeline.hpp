#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sq/cluster.hpp"
#include "sq/gateway.hpp"
#include "sq/grounding.hpp"
#include "sq/prompts.hpp"
#include "sq/refine.hpp"
#include "sq/scene.hpp"
#include "sq/views.hpp"

namespace sq {

// Run parameters, loadable from a key=value file; CLI flags override fields
// after loading. Paths are kept as given (relative paths resolve against the
// working directory, not the config file).
struct RunConfig {
  std::string scene;            // gaussian splat PLY
  std::string cameras;          // cameras JSON
  std::string sidecar;          // category or embedding sidecar, optional
  std::string prompts;          // prompt directory, empty = default
  std::string mock;             // scripted gateway: rule script or ledger
  std::string text_embeddings;  // per vocab text embeddings (similarity mode)
  std::string gt_points;        // labeled point PLY for segmentation GT
  std::string gt_labels;        // precomputed per gaussian labels JSON
  std::string out_dir = "runs";
  std::string run_dir;          // empty = timestamped directory under out_dir

  std::string mode = "category";     // category | similarity
  std::string similarity = "sum";    // sum | per_category
  std::string score = "visibility";  // visibility | volume
  double tau = 0.5;
  int k = 3;
  int min_cluster_size = 10;
  int min_samples = 5;
  double merge_eps = -1.0;  // negative = 0.05 * scene bounds diagonal
  double theta_vis = 0.5;
  double delta = 0.15;
  double zeta = 0.25;
  bool focal_zoom = false;
  int64_t max_calls = 0;   // <= 0 unlimited
  int64_t max_tokens = 0;  // <= 0 unlimited
  int max_images = 16;
  int threads = 1;
  int gt_instance = -1;             // instance id graded by cmd_segment
  std::map<std::string, std::string> models;  // role -> model tag

  static RunConfig from_file(const std::string& path);
  void validate() const;  // ranges + existence of every set path

  // Model tag for a role (evidence, vqa, select, answer, verify, judge):
  // models[role], then $SPLATQUERY_MODEL_<ROLE>, then models["default"],
  // then $SPLATQUERY_MODEL, then "default".
  std::string model(const std::string& role) const;
};

// Loaded inputs and the open run directory, shared across questions.
struct RunContext {
  RunConfig cfg;
  Scene scene;
  PromptLibrary prompts;
  std::unique_ptr<ChatGateway> inner;
  std::unique_ptr<MeteredGateway> gateway;
  std::filesystem::path dir;
  std::optional<InstanceLabeling> gt_cache;  // lazily loaded ground truth
};

// Validates the config, loads scene + sidecar + prompts, builds the gateway
// stack and creates the run directory (with the call ledger inside it).
RunContext make_run_context(const RunConfig& cfg);

// The pipeline prefix shared by every question command: evidence extraction,
// activation, clustering, scoring, initial view selection.
struct ViewSelection {
  std::vector<int32_t> activated;
  ClusterSet clusters;
  ScoreMatrix scores;
  std::vector<int32_t> initial_views;
};

ViewSelection select_views(RunContext& ctx, const std::string& question);

// Everything cmd_answer produces for one question.
struct QuestionArtifacts {
  AnswerRecord record;
  std::vector<CandidateSet> candidates;
  std::vector<int32_t> activated;      // ascending gaussian ids
  ClusterSet clusters;
  ScoreMatrix scores;
  std::vector<int32_t> initial_views;  // camera id per instance
};

// Evidence -> activation -> clustering -> view selection -> refinement.
// Stage failures rethrow their own type with the stage name prefixed.
QuestionArtifacts run_question(RunContext& ctx, const std::string& question);

// The camera the final answer was read from (novel poses carry id -1).
const Camera& answer_camera(const QuestionArtifacts& art);

// Frustum filter of the activated set against the answer view; IoU against
// distilled GT when the config names one and gt_instance >= 0.
SegmentationResult run_segmentation(RunContext& ctx, const QuestionArtifacts& art,
                                    int gt_instance);

// record.json, renders/, views.json and scores.csv under `where`.
void write_question_artifacts(const RunContext& ctx, const QuestionArtifacts& art,
                              const std::filesystem::path& where);
void write_segmentation(const SegmentationResult& seg,
                        const std::filesystem::path& path);
void write_manifest(const RunContext& ctx);

// Per gaussian instance labels as {"source": ..., "labels": [...]}; a bare
// JSON array of labels also loads. Sizes are checked against the scene where
// the labeling is used, not here.
InstanceLabeling load_labels_json(const std::string& path);
void save_labels_json(const InstanceLabeling& labeling, const std::string& path);

// One evaluation suite line: {"question": ..., "gt_answer"?, "gt_instance"?,
// "scene"?}. A scene value different from the configured scene fails that
// question; the suite continues.
struct EvalQuestion {
  std::string question;
  std::optional<std::string> gt_answer;
  std::optional<int> gt_instance;
  std::optional<std::string> scene;
};

std::vector<EvalQuestion> load_questions(const std::string& path);

struct EvalSummary {
  int total = 0;
  int completed = 0;
  std::filesystem::path report_path;
};

// Runs every question sequentially, grading LLM-Match when gt_answer is
// present and IoU when gt_instance is; failures are recorded per question and
// the report is always written.
EvalSummary run_evaluate(RunContext& ctx, const std::string& questions_path);

// Runs `body`, mapping pipeline exceptions to process exit codes (usage 2,
// empty evidence 3, no instance 4, transport 5, budget 6, anything else 1).
int guarded_exit(const std::function<int()>& body);

}  // namespace sq
