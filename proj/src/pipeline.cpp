#include "sq/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "sq/errors.hpp"
#include "sq/log.hpp"
#include "sq/semantic.hpp"

namespace sq {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": not a number: " + value);
  }
}

int64_t to_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": not an integer: " + value);
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ValidationError("config key " + key + ": not a boolean: " + value);
}

const char* const kModelRoles[] = {"evidence", "vqa", "select",
                                   "answer",   "verify", "judge"};

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "scene") cfg.scene = value;
  else if (key == "cameras") cfg.cameras = value;
  else if (key == "sidecar") cfg.sidecar = value;
  else if (key == "prompts") cfg.prompts = value;
  else if (key == "mock") cfg.mock = value;
  else if (key == "text_embeddings") cfg.text_embeddings = value;
  else if (key == "gt_points") cfg.gt_points = value;
  else if (key == "gt_labels") cfg.gt_labels = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "run_dir") cfg.run_dir = value;
  else if (key == "mode") cfg.mode = value;
  else if (key == "similarity") cfg.similarity = value;
  else if (key == "score") cfg.score = value;
  else if (key == "tau") cfg.tau = to_double(key, value);
  else if (key == "k") cfg.k = static_cast<int>(to_int(key, value));
  else if (key == "min_cluster_size")
    cfg.min_cluster_size = static_cast<int>(to_int(key, value));
  else if (key == "min_samples")
    cfg.min_samples = static_cast<int>(to_int(key, value));
  else if (key == "merge_eps") cfg.merge_eps = to_double(key, value);
  else if (key == "theta_vis") cfg.theta_vis = to_double(key, value);
  else if (key == "delta") cfg.delta = to_double(key, value);
  else if (key == "zeta") cfg.zeta = to_double(key, value);
  else if (key == "focal_zoom") cfg.focal_zoom = to_bool(key, value);
  else if (key == "max_calls") cfg.max_calls = to_int(key, value);
  else if (key == "max_tokens") cfg.max_tokens = to_int(key, value);
  else if (key == "max_images")
    cfg.max_images = static_cast<int>(to_int(key, value));
  else if (key == "threads") cfg.threads = static_cast<int>(to_int(key, value));
  else if (key == "gt_instance")
    cfg.gt_instance = static_cast<int>(to_int(key, value));
  else if (key == "model") cfg.models["default"] = value;
  else if (key.rfind("model_", 0) == 0) {
    std::string role = key.substr(6);
    bool known = std::any_of(std::begin(kModelRoles), std::end(kModelRoles),
                             [&](const char* r) { return role == r; });
    if (!known) throw ValidationError("config key " + key + ": unknown model role");
    cfg.models[role] = value;
  } else {
    throw ValidationError("unknown config key: " + key);
  }
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) return;
  if (!std::filesystem::exists(path))
    throw ValidationError(what + " does not exist: " + path);
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  auto prefixed = [&](const std::exception& e) {
    return std::string(name) + ": " + e.what();
  };
  try {
    return f();
  } catch (const EmptyEvidenceError& e) {
    throw EmptyEvidenceError(prefixed(e));
  } catch (const NoInstanceError& e) {
    throw NoInstanceError(prefixed(e));
  } catch (const BudgetError& e) {
    throw BudgetError(prefixed(e));
  } catch (const TransportError& e) {
    throw TransportError(prefixed(e));
  } catch (const FormatError& e) {
    throw FormatError(prefixed(e));
  } catch (const ValidationError& e) {
    throw ValidationError(prefixed(e));
  } catch (const Error& e) {
    throw Error(prefixed(e));
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path fresh_run_dir(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (!cfg.run_dir.empty()) {
    fs::path dir(cfg.run_dir);
    fs::create_directories(dir);
    fs::remove(dir / "ledger.jsonl");  // the metered gateway appends
    return dir;
  }
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::path base(cfg.out_dir);
  fs::create_directories(base);
  for (int n = 0;; ++n) {
    fs::path dir = base / (std::string("run-") + stamp +
                           (n ? "-" + std::to_string(n) : ""));
    std::error_code ec;
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw Error("cannot create run directory " + dir.string() + ": " +
                        ec.message());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json parse_json_line(const std::string& line, const std::string& where) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

double mean(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// GT labeling for segmentation: an explicit labels file wins over distilling
// the labeled point cloud. Loaded once per context.
const InstanceLabeling& gt_labeling(RunContext& ctx) {
  if (ctx.gt_cache) return *ctx.gt_cache;
  InstanceLabeling labeling;
  if (!ctx.cfg.gt_labels.empty()) {
    labeling = load_labels_json(ctx.cfg.gt_labels);
  } else if (!ctx.cfg.gt_points.empty()) {
    auto points = load_labeled_points(ctx.cfg.gt_points);
    labeling = distill_gt(points, ctx.scene);
  } else {
    throw ValidationError(
        "IoU requested but neither gt_labels nor gt_points is configured");
  }
  if (labeling.labels.size() != ctx.scene.size())
    throw ValidationError("GT labeling covers " +
                          std::to_string(labeling.labels.size()) +
                          " gaussians, scene has " +
                          std::to_string(ctx.scene.size()));
  ctx.gt_cache = std::move(labeling);
  return *ctx.gt_cache;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config: " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw FormatError(path + ":" + std::to_string(lineno) + ": empty key");
    assign(cfg, key, value);
  }
  return cfg;
}

void RunConfig::validate() const {
  if (mode != "category" && mode != "similarity")
    throw ValidationError("mode must be category or similarity: " + mode);
  if (similarity != "sum" && similarity != "per_category")
    throw ValidationError("similarity must be sum or per_category: " + similarity);
  score_mode_from_string(score);
  if (!std::isfinite(tau)) throw ValidationError("tau must be finite");
  if (k < 1) throw ValidationError("k must be >= 1");
  if (min_cluster_size < 2) throw ValidationError("min_cluster_size must be >= 2");
  if (min_samples < 1) throw ValidationError("min_samples must be >= 1");
  if (!std::isfinite(merge_eps)) throw ValidationError("merge_eps must be finite");
  if (!(theta_vis >= 0.0 && theta_vis < 1.0))
    throw ValidationError("theta_vis must lie in [0, 1)");
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ValidationError("delta must be positive");
  if (!(zeta > 0.0 && zeta < 1.0))
    throw ValidationError("zeta must lie in (0, 1)");
  if (max_images < 1) throw ValidationError("max_images must be >= 1");
  if (threads < 0) throw ValidationError("threads must be >= 0");
  require_file("scene", scene);
  require_file("cameras file", cameras);
  for (const auto& part : split_list(sidecar)) require_file("sidecar", part);
  require_file("prompt directory", prompts);
  require_file("mock script", mock);
  require_file("text embeddings", text_embeddings);
  require_file("gt points", gt_points);
  require_file("gt labels", gt_labels);
}

std::string RunConfig::model(const std::string& role) const {
  auto it = models.find(role);
  if (it != models.end()) return it->second;
  std::string var = "SPLATQUERY_MODEL_";
  for (char c : role) var += static_cast<char>(std::toupper(c));
  if (const char* e = std::getenv(var.c_str())) return e;
  it = models.find("default");
  if (it != models.end()) return it->second;
  if (const char* e = std::getenv("SPLATQUERY_MODEL")) return e;
  return "default";
}

RunContext make_run_context(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.scene.empty()) throw ValidationError("scene path is required");
  if (cfg.cameras.empty()) throw ValidationError("cameras path is required");
  RunContext ctx;
  ctx.cfg = cfg;
  ctx.scene = load_scene(cfg.scene, cfg.cameras);
  for (const auto& part : split_list(cfg.sidecar))
    ctx.scene = attach_semantics(ctx.scene, part);
  ctx.prompts = PromptLibrary::load(cfg.prompts.empty() ? PromptLibrary::default_dir()
                                                        : cfg.prompts);
  if (!cfg.mock.empty()) {
    ctx.inner = load_mock_script(cfg.mock);
  } else {
    HttpConfig http = http_config_from_env();
    if (http.endpoint.empty())
      throw ValidationError(
          "no model endpoint: set SPLATQUERY_ENDPOINT or configure a mock script");
    ctx.inner = std::make_unique<HttpGateway>(http);
  }
  ctx.dir = fresh_run_dir(cfg);
  ctx.gateway = std::make_unique<MeteredGateway>(
      *ctx.inner, Budget{cfg.max_calls, cfg.max_tokens},
      (ctx.dir / "ledger.jsonl").string(), cfg.max_images);
  return ctx;
}

ViewSelection select_views(RunContext& ctx, const std::string& question) {
  const RunConfig& cfg = ctx.cfg;
  const Scene& scene = ctx.scene;

  EvidenceQuery query = stage("evidence", [&] {
    int dropped = 0;
    EvidenceQuery q =
        extract_evidence_categories(question, scene, cfg.k, *ctx.gateway,
                                    ctx.prompts, cfg.model("evidence"), &dropped);
    if (dropped) warn(std::to_string(dropped) + " unknown categories dropped");
    return q;
  });

  ViewSelection out;
  out.activated = stage("activation", [&]() -> std::vector<int32_t> {
    std::vector<int32_t> active;
    if (cfg.mode == "category") {
      if (!scene.has_categories())
        throw ValidationError("category mode needs a category sidecar");
      active = activate_by_category(scene, query);
    } else {
      if (!scene.has_embeddings())
        throw ValidationError("similarity mode needs an embedding sidecar");
      if (cfg.text_embeddings.empty())
        throw ValidationError("similarity mode needs text_embeddings");
      EmbeddingMatrix vocab_embeds = load_embedding_matrix(cfg.text_embeddings);
      if (vocab_embeds.count() != scene.vocab.size())
        throw ValidationError("text embeddings rows (" +
                              std::to_string(vocab_embeds.count()) +
                              ") do not match the vocabulary (" +
                              std::to_string(scene.vocab.size()) + ")");
      if (vocab_embeds.dim != scene.embed_dim)
        throw ValidationError("text embedding dim does not match the scene");
      EmbeddingMatrix selected;
      selected.dim = vocab_embeds.dim;
      for (int32_t id : query.selected) {
        auto row = vocab_embeds.row(static_cast<size_t>(id));
        selected.data.insert(selected.data.end(), row.begin(), row.end());
      }
      SimilarityMode sim = cfg.similarity == "sum"
                               ? SimilarityMode::kSumOverCategories
                               : SimilarityMode::kPerCategory;
      active = activate_by_similarity(scene, query, selected, cfg.tau, sim);
    }
    if (active.empty())
      throw NoInstanceError("no gaussian activated for the question");
    return active;
  });

  out.clusters = stage("clustering", [&] {
    ClusterParams params;
    params.min_cluster_size = cfg.min_cluster_size;
    params.min_samples = cfg.min_samples;
    params.merge_eps = cfg.merge_eps;
    ClusterSet set = cluster_gaussians(scene, out.activated, params);
    if (set.empty()) throw NoInstanceError("clustering produced no instance");
    return set;
  });

  stage("view selection", [&] {
    RenderOptions ropts;
    ropts.theta_vis = cfg.theta_vis;
    ropts.threads = cfg.threads;
    out.scores = build_score_matrix(scene, out.clusters,
                                    score_mode_from_string(cfg.score), ropts);
    out.initial_views = select_initial_views(out.scores);
    return 0;
  });
  return out;
}

QuestionArtifacts run_question(RunContext& ctx, const std::string& question) {
  ViewSelection views = select_views(ctx, question);
  QuestionRun run = stage("refinement", [&] {
    RefineParams params;
    params.perturb.delta = ctx.cfg.delta;
    params.perturb.zeta = ctx.cfg.zeta;
    params.perturb.focal_zoom = ctx.cfg.focal_zoom;
    params.render.theta_vis = ctx.cfg.theta_vis;
    params.render.threads = ctx.cfg.threads;
    params.vqa_model = ctx.cfg.model("vqa");
    params.select_model = ctx.cfg.model("select");
    params.answer_model = ctx.cfg.model("answer");
    params.verify_model = ctx.cfg.model("verify");
    return answer_question(ctx.scene, views.clusters, views.initial_views,
                           question, *ctx.gateway, ctx.prompts, params);
  });

  QuestionArtifacts art;
  art.record = std::move(run.record);
  art.candidates = std::move(run.candidates);
  art.activated = std::move(views.activated);
  art.clusters = std::move(views.clusters);
  art.scores = std::move(views.scores);
  art.initial_views = std::move(views.initial_views);
  return art;
}

const Camera& answer_camera(const QuestionArtifacts& art) {
  int l = art.record.final_image_index;
  if (l < 0 || static_cast<size_t>(l) >= art.candidates.size())
    throw Error("final image index out of range");
  int v = art.record.instances[static_cast<size_t>(l)].selected_view_index;
  if (v < 0 || v >= kCandidateViews)
    throw Error("selected view index out of range");
  return art.candidates[static_cast<size_t>(l)].views[static_cast<size_t>(v)];
}

SegmentationResult run_segmentation(RunContext& ctx, const QuestionArtifacts& art,
                                    int gt_instance) {
  return stage("segmentation", [&] {
    const Camera& cam = answer_camera(art);
    SegmentationResult res;
    res.predicted = frustum_filter(ctx.scene, art.activated, cam);
    res.answer_camera = cam.id;
    if (gt_instance >= 0) {
      const InstanceLabeling& labeling = gt_labeling(ctx);
      std::vector<int32_t> gt = ids_with_label(labeling, gt_instance);
      std::vector<double> weights = normalized_volume(ctx.scene);
      res.iou = miou_3d(res.predicted, gt, weights);
    }
    return res;
  });
}

void write_question_artifacts(const RunContext& ctx, const QuestionArtifacts& art,
                              const std::filesystem::path& where) {
  namespace fs = std::filesystem;
  fs::create_directories(where / "renders");
  write_text(where / "record.json", to_json(art.record));
  save_score_csv(art.scores, (where / "scores.csv").string());

  json views = json::object();
  views["score_mode"] = ctx.cfg.score;
  views["initial_views"] = art.initial_views;
  json cands = json::array();
  for (const CandidateSet& set : art.candidates) {
    json group = json::array();
    for (const Camera& cam : set.views) {
      Eigen::Vector3d c = cam.center();
      group.push_back({{"id", cam.id},
                       {"center", {c.x(), c.y(), c.z()}},
                       {"fx", cam.fx},
                       {"fy", cam.fy}});
    }
    cands.push_back(std::move(group));
  }
  views["candidates"] = std::move(cands);
  write_json(where / "views.json", views);

  char name[48];
  for (size_t l = 0; l < art.candidates.size(); ++l) {
    for (size_t v = 0; v < art.candidates[l].renders.size(); ++v) {
      std::snprintf(name, sizeof name, "instance_%02zu_view_%zu.png", l, v);
      const auto& png = art.candidates[l].renders[v].png;
      std::ofstream out(where / "renders" / name, std::ios::binary);
      if (!out) throw Error("cannot write render " + std::string(name));
      out.write(reinterpret_cast<const char*>(png.data()),
                static_cast<std::streamsize>(png.size()));
    }
  }
}

void write_segmentation(const SegmentationResult& seg,
                        const std::filesystem::path& path) {
  json j = json::object();
  j["answer_camera"] = seg.answer_camera;
  j["predicted"] = seg.predicted;
  if (seg.iou) j["iou"] = *seg.iou;
  write_json(path, j);
}

void write_manifest(const RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  json params = {{"mode", cfg.mode},
                 {"similarity", cfg.similarity},
                 {"score", cfg.score},
                 {"tau", cfg.tau},
                 {"k", cfg.k},
                 {"min_cluster_size", cfg.min_cluster_size},
                 {"min_samples", cfg.min_samples},
                 {"merge_eps", cfg.merge_eps},
                 {"theta_vis", cfg.theta_vis},
                 {"delta", cfg.delta},
                 {"zeta", cfg.zeta},
                 {"focal_zoom", cfg.focal_zoom},
                 {"max_calls", cfg.max_calls},
                 {"max_tokens", cfg.max_tokens},
                 {"max_images", cfg.max_images},
                 {"threads", cfg.threads}};
  json inputs = {{"scene", cfg.scene},
                 {"cameras", cfg.cameras},
                 {"sidecar", cfg.sidecar},
                 {"mock", cfg.mock},
                 {"text_embeddings", cfg.text_embeddings},
                 {"gt_points", cfg.gt_points},
                 {"gt_labels", cfg.gt_labels}};
  json j = {{"parameters", std::move(params)},
            {"inputs", std::move(inputs)},
            {"prompt_version", ctx.prompts.version()},
            {"scene_stats",
             {{"gaussians", ctx.scene.size()},
              {"cameras", ctx.scene.cameras.size()},
              {"vocab", ctx.scene.vocab.size()},
              {"embed_dim", ctx.scene.embed_dim}}},
            {"usage",
             {{"calls", ctx.gateway->calls_used()},
              {"tokens", ctx.gateway->tokens_used()}}}};
  write_json(ctx.dir / "manifest.json", j);
}

InstanceLabeling load_labels_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open labels: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  InstanceLabeling out;
  const json* labels = nullptr;
  if (j.is_array()) {
    labels = &j;
    out.source = "file";
  } else if (j.is_object() && j.contains("labels") && j["labels"].is_array()) {
    labels = &j["labels"];
    out.source = j.value("source", "file");
  } else {
    throw FormatError(path + ": expected a labels array");
  }
  out.labels.reserve(labels->size());
  for (const json& v : *labels) {
    if (!v.is_number_integer())
      throw FormatError(path + ": labels must be integers");
    out.labels.push_back(v.get<int32_t>());
  }
  return out;
}

void save_labels_json(const InstanceLabeling& labeling, const std::string& path) {
  json j = {{"source", labeling.source}, {"labels", labeling.labels}};
  write_json(path, j);
}

std::vector<EvalQuestion> load_questions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open questions: " + path);
  std::vector<EvalQuestion> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    json j = parse_json_line(s, where);
    if (!j.is_object() || !j.contains("question") || !j["question"].is_string())
      throw FormatError(where + ": expected an object with a question string");
    EvalQuestion q;
    q.question = j["question"].get<std::string>();
    if (q.question.empty()) throw FormatError(where + ": empty question");
    if (j.contains("gt_answer")) {
      if (!j["gt_answer"].is_string())
        throw FormatError(where + ": gt_answer must be a string");
      q.gt_answer = j["gt_answer"].get<std::string>();
    }
    if (j.contains("gt_instance")) {
      if (!j["gt_instance"].is_number_integer())
        throw FormatError(where + ": gt_instance must be an integer");
      q.gt_instance = j["gt_instance"].get<int>();
    }
    if (j.contains("scene")) {
      if (!j["scene"].is_string())
        throw FormatError(where + ": scene must be a string");
      q.scene = j["scene"].get<std::string>();
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw FormatError(path + ": no questions");
  return out;
}

EvalSummary run_evaluate(RunContext& ctx, const std::string& questions_path) {
  std::vector<EvalQuestion> questions = load_questions(questions_path);
  json entries = json::array();
  std::vector<double> grades, ious, frames;
  int completed = 0;

  for (size_t i = 0; i < questions.size(); ++i) {
    const EvalQuestion& q = questions[i];
    char sub[16];
    std::snprintf(sub, sizeof sub, "q%03zu", i);
    std::filesystem::path qdir = ctx.dir / sub;
    json entry = {{"question", q.question}};
    try {
      if (q.scene && *q.scene != ctx.cfg.scene)
        throw ValidationError("question scene " + *q.scene +
                              " does not match the configured scene " +
                              ctx.cfg.scene);
      QuestionArtifacts art = run_question(ctx, q.question);
      write_question_artifacts(ctx, art, qdir);
      double L = static_cast<double>(art.clusters.size());
      frames.push_back(L);
      entry["frames"] = art.clusters.size();
      entry["verified_answer"] = art.record.verified_answer;
      if (q.gt_instance) {
        SegmentationResult seg = run_segmentation(ctx, art, *q.gt_instance);
        write_segmentation(seg, qdir / "segmentation.json");
        if (seg.iou) {
          ious.push_back(*seg.iou);
          entry["iou"] = *seg.iou;
        }
      }
      if (q.gt_answer) {
        LlmMatchResult match = stage("grading", [&] {
          return llm_match(q.question, *q.gt_answer, art.record.verified_answer,
                           *ctx.gateway, ctx.prompts, ctx.cfg.model("judge"));
        });
        if (!match.parsed) warn("unparseable grade for question " + std::string(sub));
        grades.push_back(match.score);
        entry["llm_match"] = match.score;
        entry["llm_grade"] = match.grade;
        entry["llm_parsed"] = match.parsed;
      }
      entry["status"] = "ok";
      ++completed;
    } catch (const Error& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      warn("question " + std::string(sub) + " failed: " + e.what());
    }
    entries.push_back(std::move(entry));
  }

  json aggregate = {{"questions", questions.size()}, {"completed", completed}};
  aggregate["llm_match"] = grades.empty() ? json() : json(mean(grades));
  aggregate["miou_3d"] = ious.empty() ? json() : json(mean(ious));
  aggregate["average_frames"] = frames.empty() ? json() : json(mean(frames));
  for (double k : {5.0, 8.0, 10.0}) {
    std::string key = "acc_at_" + std::to_string(static_cast<int>(k));
    aggregate[key] = ious.empty() ? json() : json(acc_at_k(ious, k));
  }

  EvalSummary summary;
  summary.total = static_cast<int>(questions.size());
  summary.completed = completed;
  summary.report_path = ctx.dir / "report.json";
  write_json(summary.report_path,
             json{{"aggregate", std::move(aggregate)},
                  {"per_question", std::move(entries)}});
  write_manifest(ctx);
  return summary;
}

int guarded_exit(const std::function<int()>& body) {
  auto fail = [](const char* kind, const std::exception& e, int code) {
    std::fprintf(stderr, "error (%s): %s\n", kind, e.what());
    return code;
  };
  try {
    return body();
  } catch (const EmptyEvidenceError& e) {
    return fail("empty evidence", e, kExitEmptyEvidence);
  } catch (const NoInstanceError& e) {
    return fail("no instance", e, kExitNoInstance);
  } catch (const TransportError& e) {
    return fail("transport", e, kExitTransport);
  } catch (const BudgetError& e) {
    return fail("budget", e, kExitBudget);
  } catch (const FormatError& e) {
    return fail("format", e, kExitUsage);
  } catch (const ValidationError& e) {
    return fail("validation", e, kExitUsage);
  } catch (const std::exception& e) {
    return fail("failure", e, kExitFailure);
  }
}

}  // namespace sq
