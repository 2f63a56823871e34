#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sq/kernels.hpp"
#include "sq/scene.hpp"

namespace sq {

class ChatGateway;
class PromptLibrary;

struct EvidenceQuery {
  std::string question;
  std::vector<int32_t> selected;  // ids into scene.vocab, model order, at most k
  int k = 3;
};

// One LLM call; the reply is resolved against the scene vocabulary and capped
// at k, keeping the model's order. Unknown names are dropped; *dropped
// reports how many so callers can warn. Zero resolvable names throws
// EmptyEvidenceError.
EvidenceQuery extract_evidence_categories(const std::string& question,
                                          const Scene& scene, int k,
                                          ChatGateway& gateway,
                                          const PromptLibrary& prompts,
                                          const std::string& model_tag,
                                          int* dropped = nullptr);

// { j | C_j in selected }, ascending gaussian ids.
std::vector<int32_t> activate_by_category(const Scene& scene, const EvidenceQuery& q);

enum class SimilarityMode {
  kSumOverCategories,  // sum_c dot(f_j, t_c) >= tau
  kPerCategory,        // some category alone reaches tau
};

// text_embeds holds one unit row per selected category, in q.selected order.
// Scores accumulate in double; empty evidence activates nothing.
std::vector<int32_t> activate_by_similarity(
    const Scene& scene, const EvidenceQuery& q, const EmbeddingMatrix& text_embeds,
    double tau, SimilarityMode mode = SimilarityMode::kSumOverCategories,
    const kern::KernelTable* kernels = nullptr);

}  // namespace sq
