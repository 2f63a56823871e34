#include "sq/semantic.hpp"

#include <algorithm>
#include <limits>

#include "sq/errors.hpp"
#include "sq/gateway.hpp"
#include "sq/parse.hpp"
#include "sq/prompts.hpp"

namespace sq {

EvidenceQuery extract_evidence_categories(const std::string& question,
                                          const Scene& scene, int k,
                                          ChatGateway& gateway,
                                          const PromptLibrary& prompts,
                                          const std::string& model_tag,
                                          int* dropped) {
  if (scene.vocab.empty())
    throw ValidationError("evidence extraction needs a scene vocabulary");
  if (k <= 0) throw ValidationError("evidence cap k must be positive");

  ChatRequest req;
  req.system_text = prompts.system_text();
  req.content_text = prompts.evidence(question, scene.vocab);
  req.model_tag = model_tag;
  ChatResponse res = gateway.chat(req);

  EvidenceQuery q;
  q.question = question;
  q.k = k;
  q.selected = parse_category_list(res.text, scene.vocab, dropped);
  if (q.selected.empty()) {
    std::string said = res.text.substr(0, 80);
    if (res.text.size() > 80) said += "...";
    throw EmptyEvidenceError("no evidence categories for \"" + question +
                             "\"; model said \"" + said + "\"");
  }
  if (q.selected.size() > static_cast<size_t>(k)) q.selected.resize(k);
  return q;
}

std::vector<int32_t> activate_by_category(const Scene& scene, const EvidenceQuery& q) {
  if (!scene.has_categories())
    throw ValidationError("category activation needs a category sidecar");
  std::vector<char> want(scene.vocab.size(), 0);
  for (int32_t id : q.selected) {
    if (id < 0 || static_cast<size_t>(id) >= scene.vocab.size())
      throw ValidationError("evidence category id " + std::to_string(id) +
                            " is outside the vocabulary");
    want[id] = 1;
  }
  std::vector<int32_t> out;
  for (size_t j = 0; j < scene.size(); ++j) {
    int32_t c = scene.categories[j];
    if (c >= 0 && want[c]) out.push_back(static_cast<int32_t>(j));
  }
  return out;
}

std::vector<int32_t> activate_by_similarity(const Scene& scene, const EvidenceQuery& q,
                                            const EmbeddingMatrix& text_embeds,
                                            double tau, SimilarityMode mode,
                                            const kern::KernelTable* kernels) {
  if (!scene.has_embeddings())
    throw ValidationError("similarity activation needs an embedding sidecar");
  if (text_embeds.dim != scene.embed_dim)
    throw ValidationError("embedding dimension mismatch: scene " +
                          std::to_string(scene.embed_dim) + ", text " +
                          std::to_string(text_embeds.dim));
  if (text_embeds.count() != q.selected.size())
    throw ValidationError("need one text embedding per selected category (" +
                          std::to_string(q.selected.size()) + " selected, " +
                          std::to_string(text_embeds.count()) + " rows)");
  if (q.selected.empty()) return {};

  const kern::KernelTable& K = kernels ? *kernels : kern::kernels();
  const int64_t n = static_cast<int64_t>(scene.size());
  const double kInit = mode == SimilarityMode::kSumOverCategories
                           ? 0.0
                           : -std::numeric_limits<double>::infinity();
  std::vector<double> score(n, kInit), tmp(n);
  for (size_t c = 0; c < q.selected.size(); ++c) {
    K.dot_rows(scene.embeddings.data(), n, scene.embed_dim,
               text_embeds.row(c).data(), tmp.data());
    for (int64_t j = 0; j < n; ++j)
      score[j] = mode == SimilarityMode::kSumOverCategories
                     ? score[j] + tmp[j]
                     : std::max(score[j], tmp[j]);
  }
  std::vector<int32_t> out;
  for (int64_t j = 0; j < n; ++j)
    if (score[j] >= tau) out.push_back(static_cast<int32_t>(j));
  return out;
}

}  // namespace sq
