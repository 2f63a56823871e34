#include "sq/prompts.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sq/errors.hpp"

#ifndef SQ_DEFAULT_PROMPT_DIR
#define SQ_DEFAULT_PROMPT_DIR "assets/prompts"
#endif

namespace sq {

namespace {

std::string read_asset(const std::string& dir, const std::string& name) {
  const std::string path = dir + "/" + name;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("prompt asset missing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' '))
    s.pop_back();
  return s;
}

std::string substitute(std::string text, const std::string& key,
                       const std::string& value) {
  const std::string token = "{" + key + "}";
  size_t pos = text.find(token);
  if (pos == std::string::npos)
    throw FormatError("prompt template lost its {" + key + "} placeholder");
  while (pos != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos = text.find(token, pos + value.size());
  }
  return text;
}

std::string image_labels(int count) {
  if (count < 1) throw ValidationError("prompt needs at least one image");
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i) out += "\n";
    out += "Image " + std::to_string(i);
  }
  return out;
}

}  // namespace

PromptLibrary PromptLibrary::load(const std::string& dir) {
  PromptLibrary lib;
  lib.version_ = strip(read_asset(dir, "VERSION"));
  lib.system_ = strip(read_asset(dir, "system.txt"));
  lib.evidence_ = read_asset(dir, "evidence.txt");
  lib.visual_qa_ = read_asset(dir, "visual_qa.txt");
  lib.view_selection_ = read_asset(dir, "view_selection.txt");
  lib.verification_ = read_asset(dir, "verification.txt");
  lib.eqa_answer_ = read_asset(dir, "eqa_answer.txt");
  lib.llm_match_ = read_asset(dir, "llm_match.txt");
  return lib;
}

std::string PromptLibrary::default_dir() {
  if (const char* e = std::getenv("SPLATQUERY_PROMPTS")) return e;
  return SQ_DEFAULT_PROMPT_DIR;
}

std::string PromptLibrary::evidence(const std::string& question,
                                    std::span<const std::string> categories) const {
  std::string joined;
  for (size_t i = 0; i < categories.size(); ++i) {
    if (i) joined += ", ";
    joined += categories[i];
  }
  return substitute(substitute(evidence_, "question", question), "categories", joined);
}

std::string PromptLibrary::visual_qa(const std::string& question,
                                     int image_count) const {
  return substitute(substitute(visual_qa_, "images", image_labels(image_count)),
                    "question", question);
}

std::string PromptLibrary::view_selection(
    const std::string& question, std::span<const std::string> candidates) const {
  std::string lines;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (i) lines += "\n";
    lines += std::to_string(i) + ": " + candidates[i];
  }
  return substitute(substitute(view_selection_, "question", question), "candidates",
                    lines);
}

std::string PromptLibrary::verification(const std::string& question,
                                        const std::string& answer0,
                                        const std::string& answer1) const {
  std::string out = substitute(verification_, "question", question);
  out = substitute(out, "candidate_answer_0", answer0);
  return substitute(out, "candidate_answer_1", answer1);
}

std::string PromptLibrary::eqa_answer(const std::string& question,
                                      int image_count) const {
  return substitute(substitute(eqa_answer_, "images", image_labels(image_count)),
                    "question", question);
}

std::string PromptLibrary::llm_match(const std::string& question,
                                     const std::string& answer,
                                     const std::string& response) const {
  std::string out = substitute(llm_match_, "question", question);
  out = substitute(out, "answer", answer);
  return substitute(out, "response", response);
}

}  // namespace sq
