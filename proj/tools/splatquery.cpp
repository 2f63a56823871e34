#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sq/errors.hpp"
#include "sq/pipeline.hpp"

namespace {

// Every RunConfig field a flag can override; only flags the user actually
// passed are applied on top of the config file.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> scene, cameras, prompts, mock, text_embeddings;
  std::optional<std::string> gt_points, gt_labels, out_dir, run_dir;
  std::vector<std::string> sidecars;
  std::optional<std::string> mode, similarity, score;
  std::optional<double> tau, merge_eps, theta_vis, delta, zeta;
  std::optional<int> k, min_cluster_size, min_samples, max_images, threads;
  std::optional<int> gt_instance;
  std::optional<std::int64_t> max_calls, max_tokens;
  bool focal_zoom = false;
  std::optional<std::string> model, model_evidence, model_vqa, model_select;
  std::optional<std::string> model_answer, model_verify, model_judge;

  sq::RunConfig build() const {
    sq::RunConfig cfg;
    if (config) cfg = sq::RunConfig::from_file(*config);
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(cfg.scene, scene);
    set(cfg.cameras, cameras);
    set(cfg.prompts, prompts);
    set(cfg.mock, mock);
    set(cfg.text_embeddings, text_embeddings);
    set(cfg.gt_points, gt_points);
    set(cfg.gt_labels, gt_labels);
    set(cfg.out_dir, out_dir);
    set(cfg.run_dir, run_dir);
    if (!sidecars.empty()) {
      cfg.sidecar.clear();
      for (const auto& s : sidecars) {
        if (!cfg.sidecar.empty()) cfg.sidecar += ',';
        cfg.sidecar += s;
      }
    }
    set(cfg.mode, mode);
    set(cfg.similarity, similarity);
    set(cfg.score, score);
    set(cfg.tau, tau);
    set(cfg.merge_eps, merge_eps);
    set(cfg.theta_vis, theta_vis);
    set(cfg.delta, delta);
    set(cfg.zeta, zeta);
    set(cfg.k, k);
    set(cfg.min_cluster_size, min_cluster_size);
    set(cfg.min_samples, min_samples);
    set(cfg.max_images, max_images);
    set(cfg.threads, threads);
    set(cfg.gt_instance, gt_instance);
    set(cfg.max_calls, max_calls);
    set(cfg.max_tokens, max_tokens);
    if (focal_zoom) cfg.focal_zoom = true;
    auto model_set = [&cfg](const char* role, const std::optional<std::string>& v) {
      if (v) cfg.models[role] = *v;
    };
    model_set("default", model);
    model_set("evidence", model_evidence);
    model_set("vqa", model_vqa);
    model_set("select", model_select);
    model_set("answer", model_answer);
    model_set("verify", model_verify);
    model_set("judge", model_judge);
    return cfg;
  }
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key=value config file");
  cmd->add_option("--scene", o.scene, "gaussian splat PLY");
  cmd->add_option("--cameras", o.cameras, "cameras JSON");
  cmd->add_option("--sidecar", o.sidecars, "semantic sidecar (repeatable)");
  cmd->add_option("--prompts", o.prompts, "prompt directory");
  cmd->add_option("--mock", o.mock, "scripted gateway: rule script or ledger");
  cmd->add_option("--text-embeddings", o.text_embeddings,
                  "vocabulary text embeddings (similarity mode)");
  cmd->add_option("--gt-points", o.gt_points, "labeled point PLY");
  cmd->add_option("--gt-labels", o.gt_labels, "per gaussian labels JSON");
  cmd->add_option("--out-dir", o.out_dir, "parent of timestamped run dirs");
  cmd->add_option("--run-dir", o.run_dir, "exact run directory");
  cmd->add_option("--mode", o.mode, "activation mode: category | similarity");
  cmd->add_option("--similarity", o.similarity,
                  "similarity combine: sum | per_category");
  cmd->add_option("--score", o.score, "view score: visibility | volume");
  cmd->add_option("--tau", o.tau, "similarity activation threshold");
  cmd->add_option("--k", o.k, "evidence category cap");
  cmd->add_option("--min-cluster-size", o.min_cluster_size,
                  "HDBSCAN minimum cluster size");
  cmd->add_option("--min-samples", o.min_samples, "HDBSCAN core point count");
  cmd->add_option("--merge-eps", o.merge_eps,
                  "centroid merge radius, negative = auto");
  cmd->add_option("--theta-vis", o.theta_vis, "visibility threshold");
  cmd->add_option("--delta", o.delta, "lateral shift fraction");
  cmd->add_option("--zeta", o.zeta, "zoom fraction");
  cmd->add_flag("--focal-zoom", o.focal_zoom,
                "zoom by scaling focal length instead of dollying");
  cmd->add_option("--max-calls", o.max_calls, "model call budget, <=0 unlimited");
  cmd->add_option("--max-tokens", o.max_tokens, "token budget, <=0 unlimited");
  cmd->add_option("--max-images", o.max_images, "attachments per call cap");
  cmd->add_option("--threads", o.threads, "render threads, 0 = hardware");
  cmd->add_option("--model", o.model, "default model tag");
  cmd->add_option("--model-evidence", o.model_evidence, "evidence model tag");
  cmd->add_option("--model-vqa", o.model_vqa, "per view VQA model tag");
  cmd->add_option("--model-select", o.model_select, "view selection model tag");
  cmd->add_option("--model-answer", o.model_answer, "answering model tag");
  cmd->add_option("--model-verify", o.model_verify, "verification model tag");
  cmd->add_option("--model-judge", o.model_judge, "grading model tag");
}

int cmd_answer(const sq::RunConfig& cfg, const std::string& question,
               bool segment) {
  sq::RunContext ctx = sq::make_run_context(cfg);
  sq::QuestionArtifacts art = sq::run_question(ctx, question);
  sq::write_question_artifacts(ctx, art, ctx.dir);
  if (segment) {
    sq::SegmentationResult seg = sq::run_segmentation(ctx, art, cfg.gt_instance);
    sq::write_segmentation(seg, ctx.dir / "segmentation.json");
    std::printf("predicted %zu gaussians from camera %d\n", seg.predicted.size(),
                seg.answer_camera);
    if (seg.iou) std::printf("iou %.6f\n", *seg.iou);
  }
  sq::write_manifest(ctx);
  std::printf("run directory: %s\n", ctx.dir.string().c_str());
  std::printf("answer: %s\n", art.record.verified_answer.c_str());
  return sq::kExitOk;
}

int cmd_select_views(const sq::RunConfig& cfg, const std::string& question) {
  sq::RunContext ctx = sq::make_run_context(cfg);
  sq::ViewSelection views = sq::select_views(ctx, question);
  sq::save_score_csv(views.scores, (ctx.dir / "scores.csv").string());
  sq::write_manifest(ctx);
  std::printf("run directory: %s\n", ctx.dir.string().c_str());
  for (size_t l = 0; l < views.initial_views.size(); ++l)
    std::printf("instance %zu: %zu gaussians, initial view %d\n", l,
                views.clusters.clusters[l].size(), views.initial_views[l]);
  return sq::kExitOk;
}

int cmd_evaluate(const sq::RunConfig& cfg, const std::string& questions) {
  sq::RunContext ctx = sq::make_run_context(cfg);
  sq::EvalSummary summary = sq::run_evaluate(ctx, questions);
  std::printf("report: %s\n", summary.report_path.string().c_str());
  std::printf("completed %d of %d questions\n", summary.completed, summary.total);
  return summary.completed == summary.total ? sq::kExitOk : sq::kExitFailure;
}

int cmd_build_sidecar(const sq::RunConfig& cfg) {
  cfg.validate();
  if (cfg.scene.empty() || cfg.cameras.empty() || cfg.sidecar.empty())
    throw sq::ValidationError("build-sidecar needs --scene, --cameras and --sidecar");
  sq::Scene scene = sq::load_scene(cfg.scene, cfg.cameras);
  std::string rest = cfg.sidecar;
  while (!rest.empty()) {
    size_t comma = rest.find(',');
    scene = sq::attach_semantics(scene, rest.substr(0, comma));
    rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
  }
  size_t labeled = 0;
  for (int32_t c : scene.categories)
    if (c >= 0) ++labeled;
  std::printf("gaussians: %zu\ncameras: %zu\nvocabulary: %zu\n", scene.size(),
              scene.cameras.size(), scene.vocab.size());
  std::printf("labeled: %zu\nembedding dim: %d\n", labeled, scene.embed_dim);
  return sq::kExitOk;
}

int cmd_distill_gt(const sq::RunConfig& cfg, const std::string& points_path,
                   const std::string& out_path) {
  cfg.validate();
  if (cfg.scene.empty())
    throw sq::ValidationError("distill-gt needs --scene");
  sq::Scene scene = sq::load_gaussian_ply(cfg.scene);
  std::vector<sq::LabeledPoint> points = sq::load_labeled_points(points_path);
  sq::InstanceLabeling labeling = sq::distill_gt(points, scene);
  sq::save_labels_json(labeling, out_path);
  size_t labeled = 0;
  for (int32_t c : labeling.labels)
    if (c >= 0) ++labeled;
  std::printf("labeled %zu of %zu gaussians from %zu points\n", labeled,
              labeling.labels.size(), points.size());
  std::printf("labels: %s\n", out_path.c_str());
  return sq::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"question answering over gaussian splat scenes"};
  app.require_subcommand(1);
  Overrides o;
  std::string question, questions_path, points_path, out_path;

  CLI::App* answer = app.add_subcommand("answer", "answer one question");
  answer->add_option("--question", question, "the question")->required();
  add_common_flags(answer, o);

  CLI::App* segment =
      app.add_subcommand("segment", "answer, then segment the answer view");
  segment->add_option("--question", question, "the question")->required();
  segment->add_option("--gt-instance", o.gt_instance,
                      "instance id to grade the IoU against");
  add_common_flags(segment, o);

  CLI::App* evaluate = app.add_subcommand("evaluate", "run a question suite");
  evaluate->add_option("--questions", questions_path, "questions JSON lines file")
      ->required();
  add_common_flags(evaluate, o);

  CLI::App* select =
      app.add_subcommand("select-views", "score and pick initial views");
  select->add_option("--question", question, "the question")->required();
  add_common_flags(select, o);

  CLI::App* sidecar =
      app.add_subcommand("build-sidecar", "validate and attach semantics");
  add_common_flags(sidecar, o);

  CLI::App* distill =
      app.add_subcommand("distill-gt", "distill point labels onto gaussians");
  distill->add_option("--points", points_path, "labeled point PLY")->required();
  distill->add_option("--out", out_path, "output labels JSON")->required();
  add_common_flags(distill, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? sq::kExitOk : sq::kExitUsage;
  }

  return sq::guarded_exit([&]() -> int {
    sq::RunConfig cfg = o.build();
    if (answer->parsed()) return cmd_answer(cfg, question, false);
    if (segment->parsed()) return cmd_answer(cfg, question, true);
    if (evaluate->parsed()) return cmd_evaluate(cfg, questions_path);
    if (select->parsed()) return cmd_select_views(cfg, question);
    if (sidecar->parsed()) return cmd_build_sidecar(cfg);
    if (distill->parsed()) return cmd_distill_gt(cfg, points_path, out_path);
    return sq::kExitUsage;
  });
}
