#pragma once

#include <span>
#include <string>

namespace sq {

// Prompt templates loaded from a versioned asset directory. Placeholders are
// {question}, {categories}, {candidates}, {images}, {candidate_answer_0},
// {candidate_answer_1}, {answer}, {response}; substitution throws if a
// template lost its placeholder. Image attachments travel separately and in
// order, so {images} expands to one "Image i" label line per attachment.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::string& dir);
  // SPLATQUERY_PROMPTS when set, otherwise the build-time asset path.
  static std::string default_dir();

  const std::string& version() const { return version_; }
  const std::string& system_text() const { return system_; }

  std::string evidence(const std::string& question,
                       std::span<const std::string> categories) const;
  std::string visual_qa(const std::string& question, int image_count) const;
  std::string view_selection(const std::string& question,
                             std::span<const std::string> candidates) const;
  std::string verification(const std::string& question, const std::string& answer0,
                           const std::string& answer1) const;
  std::string eqa_answer(const std::string& question, int image_count) const;
  std::string llm_match(const std::string& question, const std::string& answer,
                        const std::string& response) const;

 private:
  std::string version_;
  std::string system_;
  std::string evidence_;
  std::string visual_qa_;
  std::string view_selection_;
  std::string verification_;
  std::string eqa_answer_;
  std::string llm_match_;
};

}  // namespace sq
