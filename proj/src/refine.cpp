#include "sq/refine.hpp"

#include <json.hpp>

#include "sq/errors.hpp"
#include "sq/log.hpp"
#include "sq/parse.hpp"

namespace sq {
namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string png_str(const Image& im) {
  return std::string(reinterpret_cast<const char*>(im.png.data()),
                     im.png.size());
}

Camera moved(const Camera& base, const Eigen::Vector3d& center) {
  Camera c = base;
  c.id = -1;
  c.t = -(base.R * center);
  return c;
}

// [left, right, zoom_in, zoom_out] around one pose.
std::vector<Camera> four_perturbations(const Camera& cam,
                                       const Eigen::Vector3d& centroid,
                                       const PerturbParams& params) {
  Eigen::Vector3d c = cam.center();
  Eigen::Vector3d to_target = centroid - c;
  double dist = to_target.norm();
  if (dist < 1e-6) {
    warn("perturb: camera " + std::to_string(cam.id) +
         " sits on the cluster centroid, keeping the initial pose");
    Camera same = cam;
    same.id = -1;
    return {same, same, same, same};
  }

  Eigen::Vector3d right = cam.R.row(0).transpose();
  std::vector<Camera> out;
  out.push_back(moved(cam, c - params.delta * dist * right));
  out.push_back(moved(cam, c + params.delta * dist * right));
  if (params.focal_zoom) {
    Camera zin = cam, zout = cam;
    zin.id = zout.id = -1;
    zin.fx *= 1.0 + params.zeta;
    zin.fy *= 1.0 + params.zeta;
    zout.fx /= 1.0 + params.zeta;
    zout.fy /= 1.0 + params.zeta;
    out.push_back(zin);
    out.push_back(zout);
  } else {
    out.push_back(moved(cam, c + params.zeta * to_target));
    out.push_back(moved(cam, c - params.zeta * to_target));
  }
  return out;
}

std::string reprompt_index_suffix(int count) {
  return "\n\nThe previous reply could not be parsed. Answer with a single "
         "integer between 0 and " +
         std::to_string(count - 1) + ".";
}

// Ask for an integer in [0, count); one reprompt, then index 0.
int ask_index(ChatGateway& gw, const PromptLibrary& prompts,
              const std::string& prompt, int count, const std::string& model,
              const char* what) {
  ChatRequest req;
  req.system_text = prompts.system_text();
  req.content_text = prompt;
  req.model_tag = model;
  if (auto idx = parse_index(gw.chat(req).text, count)) return *idx;

  req.content_text = prompt + reprompt_index_suffix(count);
  if (auto idx = parse_index(gw.chat(req).text, count)) return *idx;

  warn(std::string(what) + ": unparseable index twice, falling back to 0");
  return 0;
}

}  // namespace

std::vector<Camera> perturb_views(std::span<const Camera> initial,
                                  const ClusterSet& clusters,
                                  const PerturbParams& params) {
  if (initial.empty())
    throw ValidationError("perturb views: no initial views");
  if (initial.size() != clusters.size())
    throw ValidationError("perturb views: " + std::to_string(initial.size()) +
                          " initial views for " +
                          std::to_string(clusters.size()) + " clusters");
  std::vector<Camera> out;
  out.reserve(initial.size() * 4);
  for (size_t l = 0; l < initial.size(); ++l)
    for (Camera& c :
         four_perturbations(initial[l], clusters.centroids[l], params))
      out.push_back(std::move(c));
  return out;
}

CandidateSet make_candidate_set(const Scene& scene, const Camera& initial,
                                const Eigen::Vector3d& centroid,
                                int32_t instance_id,
                                const PerturbParams& params,
                                const RenderOptions& opts) {
  CandidateSet cs;
  cs.instance_id = instance_id;
  cs.views.push_back(initial);
  for (Camera& c : four_perturbations(initial, centroid, params))
    cs.views.push_back(std::move(c));
  cs.renders.reserve(cs.views.size());
  for (const Camera& cam : cs.views)
    cs.renders.push_back(
        make_image(render(scene, cam, std::span<const int32_t>{}, opts)));
  return cs;
}

InstanceAnswer judge_views(const CandidateSet& cands,
                           const std::string& question, ChatGateway& gw,
                           const PromptLibrary& prompts,
                           const std::string& vqa_model,
                           const std::string& select_model) {
  if (cands.views.size() != kCandidateViews ||
      cands.renders.size() != kCandidateViews)
    throw ValidationError("judge views: expected " +
                          std::to_string(kCandidateViews) +
                          " rendered candidate views");
  if (question.empty()) throw ValidationError("judge views: empty question");

  InstanceAnswer out;
  for (int i = 0; i < kCandidateViews; ++i) {
    ChatRequest req;
    req.system_text = prompts.system_text();
    req.content_text = prompts.visual_qa(question, 1);
    req.images.push_back(png_str(cands.renders[i]));
    req.model_tag = vqa_model;
    out.per_view_answers.push_back(trim(gw.chat(req).text));
  }

  out.selected_view_index = ask_index(
      gw, prompts, prompts.view_selection(question, out.per_view_answers),
      kCandidateViews, select_model, "view selection");
  return out;
}

ViewAnswer answer_with_views(std::span<const Image> renders,
                             const std::string& question, ChatGateway& gw,
                             const PromptLibrary& prompts,
                             const std::string& model) {
  if (renders.empty()) throw ValidationError("answer: no renders");
  if (question.empty()) throw ValidationError("answer: empty question");
  const int n = static_cast<int>(renders.size());

  ChatRequest req;
  req.system_text = prompts.system_text();
  req.content_text = prompts.eqa_answer(question, n);
  for (const Image& im : renders) req.images.push_back(png_str(im));
  req.model_tag = model;

  if (auto p = parse_image_answer(gw.chat(req).text, n))
    return {p->first, p->second};

  req.content_text +=
      "\n\nThe previous reply did not follow the output format. Reply "
      "exactly as: Image i \\n [Answer].";
  std::string reply = gw.chat(req).text;
  if (auto p = parse_image_answer(reply, n)) return {p->first, p->second};

  warn("answer: reply ignored the image format twice, keeping the raw text");
  return {0, trim(reply)};
}

int verify_answers(const std::string& question, const std::string& answer0,
                   const std::string& answer1, ChatGateway& gw,
                   const PromptLibrary& prompts, const std::string& model) {
  if (question.empty()) throw ValidationError("verification: empty question");
  if (answer0.empty() || answer1.empty())
    throw ValidationError("verification: candidate answers must be non-empty");
  return ask_index(gw, prompts,
                   prompts.verification(question, answer0, answer1), 2, model,
                   "verification");
}

QuestionRun answer_question(const Scene& scene, const ClusterSet& clusters,
                            std::span<const int32_t> initial_view_ids,
                            const std::string& question, ChatGateway& gw,
                            const PromptLibrary& prompts,
                            const RefineParams& params) {
  const size_t L = clusters.size();
  if (L == 0) throw ValidationError("refine: cluster set is empty");
  if (initial_view_ids.size() != L)
    throw ValidationError("refine: need one initial view per cluster");
  if (question.empty()) throw ValidationError("refine: empty question");

  QuestionRun run;
  run.record.question = question;
  for (size_t l = 0; l < L; ++l)
    run.candidates.push_back(make_candidate_set(
        scene, scene.camera_by_id(initial_view_ids[l]), clusters.centroids[l],
        static_cast<int32_t>(l), params.perturb, params.render));

  std::vector<Image> initial_renders;
  for (const CandidateSet& cs : run.candidates)
    initial_renders.push_back(cs.renders[0]);
  ViewAnswer a0 = answer_with_views(initial_renders, question, gw, prompts,
                                    params.answer_model);
  run.record.initial_answer = a0.answer;
  run.record.initial_image_index = a0.image_index;

  for (const CandidateSet& cs : run.candidates)
    run.record.instances.push_back(judge_views(
        cs, question, gw, prompts, params.vqa_model, params.select_model));

  std::vector<Image> final_renders;
  for (size_t l = 0; l < L; ++l)
    final_renders.push_back(
        run.candidates[l].renders[run.record.instances[l].selected_view_index]);
  ViewAnswer a1 = answer_with_views(final_renders, question, gw, prompts,
                                    params.answer_model);
  run.record.final_answer = a1.answer;
  run.record.final_image_index = a1.image_index;

  if (run.record.initial_answer.empty() || run.record.final_answer.empty()) {
    run.record.verification_choice =
        run.record.initial_answer.empty() && !run.record.final_answer.empty()
            ? 1
            : 0;
    warn("verification skipped: empty candidate answer");
  } else {
    run.record.verification_choice = verify_answers(
        question, run.record.initial_answer, run.record.final_answer, gw,
        prompts, params.verify_model);
  }
  run.record.verified_answer = run.record.verification_choice == 1
                                   ? run.record.final_answer
                                   : run.record.initial_answer;
  return run;
}

std::string to_json(const AnswerRecord& rec) {
  nlohmann::json j;
  j["question"] = rec.question;
  j["initial_answer"] = rec.initial_answer;
  j["initial_image_index"] = rec.initial_image_index;
  j["final_answer"] = rec.final_answer;
  j["final_image_index"] = rec.final_image_index;
  j["verified_answer"] = rec.verified_answer;
  j["verification_choice"] = rec.verification_choice;
  j["instances"] = nlohmann::json::array();
  for (const InstanceAnswer& inst : rec.instances)
    j["instances"].push_back({{"per_view_answers", inst.per_view_answers},
                              {"selected_view_index", inst.selected_view_index}});
  return j.dump(2) + "\n";
}

}  // namespace sq
