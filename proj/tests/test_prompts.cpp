#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "sq/errors.hpp"
#include "sq/parse.hpp"
#include "sq/prompts.hpp"
#include "testutil.hpp"

using namespace sq;

namespace {

size_t count_of(const std::string& haystack, const std::string& needle) {
  size_t n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

const PromptLibrary& lib() {
  static PromptLibrary l = PromptLibrary::load(PromptLibrary::default_dir());
  return l;
}

}  // namespace

TEST_CASE("library loads the versioned assets") {
  CHECK(lib().version() == "1");
  CHECK(lib().system_text() == "You are an AI agent in a 3D indoor scene.");
  CHECK_THROWS_AS(PromptLibrary::load(sqt::temp_dir("noprompts")), ValidationError);
}

TEST_CASE("evidence prompt carries question and vocabulary") {
  std::vector<std::string> vocab{"radiator", "cushion", "sink", "pillow"};
  std::string p = lib().evidence("Where can I take a nap?", vocab);
  CHECK(p.find("You should retrieve helpful objects in order.") != std::string::npos);
  CHECK(p.find("Question: Where can I take a nap?") != std::string::npos);
  CHECK(p.find("radiator, cushion, sink, pillow") != std::string::npos);
  CHECK(p.find("Evidence categories:") != std::string::npos);
  CHECK(p.find("{question}") == std::string::npos);
}

TEST_CASE("visual qa prompt labels one image per attachment") {
  std::string p = lib().visual_qa("What is on the desk?", 3);
  CHECK(p.find("You are an intelligent question answering agent.") != std::string::npos);
  CHECK(p.find("collected from a single location") != std::string::npos);
  CHECK(p.find("Image 0\nImage 1\nImage 2") != std::string::npos);
  CHECK(p.find("Image 3") == std::string::npos);
  CHECK(p.find("User Query: What is on the desk?") != std::string::npos);
  CHECK_THROWS_AS(lib().visual_qa("q", 0), ValidationError);
}

TEST_CASE("view selection prompt lists indexed candidates and the rules") {
  std::vector<std::string> cands{"A mug.", "I cannot tell."};
  std::string p = lib().view_selection("Where is the mug?", cands);
  CHECK(p.find("0: A mug.") != std::string::npos);
  CHECK(p.find("1: I cannot tell.") != std::string::npos);
  for (int rule = 1; rule <= 6; ++rule)
    CHECK(p.find(std::to_string(rule) + ". ") != std::string::npos);
  CHECK(p.find("you MUST return its index") != std::string::npos);
  CHECK(p.find("An integer index of the best answer sentence.") != std::string::npos);
}

TEST_CASE("verification prompt pins the tie and refusal rules") {
  std::string p = lib().verification("Where is the mug?", "On the desk.", "Not sure.");
  CHECK(p.find("0: On the desk.") != std::string::npos);
  CHECK(p.find("1: Not sure.") != std::string::npos);
  CHECK(p.find("If tie, pick the lower index.") != std::string::npos);
  CHECK(p.find("Reject any that say they can't tell/are unsure") != std::string::npos);
  CHECK(count_of(p, "prefer the one that gives the information") == 1);
  CHECK(p.find("Output ONLY the integer index") != std::string::npos);
}

TEST_CASE("answer prompt pins the image-index output format") {
  std::string p = lib().eqa_answer("Where is the fruit bowl?", 2);
  CHECK(p.find("Image 0\nImage 1") != std::string::npos);
  CHECK(p.find("\"Image i \\n [Answer]\"") != std::string::npos);
  CHECK(p.find("Image 0 \\n The fruit bowl is on the kitchen counter.") !=
        std::string::npos);
}

TEST_CASE("judge prompt grades on the 1 to 5 scale") {
  std::string p = lib().llm_match("Is it overcast?", "no", "yes");
  CHECK(p.find("single integer between 1 and 5") != std::string::npos);
  CHECK(p.find("Question: Is it overcast?") != std::string::npos);
  CHECK(p.find("Answer: no") != std::string::npos);
  CHECK(p.find("Response: yes") != std::string::npos);
  CHECK(p.rfind("Your mark:") != std::string::npos);
}

TEST_CASE("templates that lost a placeholder are rejected") {
  std::string dir = sqt::temp_dir("brokenprompts");
  for (const char* name : {"VERSION", "system.txt", "evidence.txt", "visual_qa.txt",
                           "view_selection.txt", "verification.txt", "eqa_answer.txt",
                           "llm_match.txt"})
    std::ofstream(dir + "/" + name) << "no placeholders here\n";
  PromptLibrary broken = PromptLibrary::load(dir);
  CHECK_THROWS_AS(broken.visual_qa("q", 1), FormatError);
  CHECK_THROWS_AS(broken.verification("q", "a", "b"), FormatError);
}

TEST_CASE("index replies parse within range only") {
  CHECK(parse_index("2", 5) == 2);
  CHECK(parse_index("The best answer is 3.", 5) == 3);
  CHECK(parse_index("index: 0", 5) == 0);
  CHECK(!parse_index("seven", 5));
  CHECK(!parse_index("10", 5));
  CHECK(!parse_index("", 5));
  CHECK(!parse_index("99999999999999999999", 5));
}

TEST_CASE("image answers parse the paper format and its variants") {
  auto r = parse_image_answer("Image 2 \n The mug is on the desk.", 3);
  REQUIRE(r.has_value());
  CHECK(r->first == 2);
  CHECK(r->second == "The mug is on the desk.");

  r = parse_image_answer("Image 0\nOn the counter.", 1);
  REQUIRE(r.has_value());
  CHECK(r->first == 0);
  CHECK(r->second == "On the counter.");

  r = parse_image_answer("\"Image 1 \\n Next to the lamp.\"", 2);
  REQUIRE(r.has_value());
  CHECK(r->first == 1);
  CHECK(r->second == "Next to the lamp.");

  r = parse_image_answer("image 0: by the window", 2);
  REQUIRE(r.has_value());
  CHECK(r->second == "by the window");

  CHECK(!parse_image_answer("I cannot tell.", 3));
  CHECK(!parse_image_answer("Image 9 \n text", 3));
  CHECK(!parse_image_answer("Image 1", 3));
  CHECK(!parse_image_answer("Image 1 \n  ", 3));
}

TEST_CASE("category replies resolve against the vocabulary") {
  std::vector<std::string> vocab{"radiator", "cushion", "sink", "pillow", "picture"};
  CHECK(parse_category_list("pillow, cushion.", vocab) ==
        std::vector<int32_t>{3, 1});
  CHECK(parse_category_list("Evidence categories: pillow, cushion", vocab) ==
        std::vector<int32_t>{3, 1});
  CHECK(parse_category_list("sofa, Pillow", vocab) == std::vector<int32_t>{3});
  CHECK(parse_category_list("pillow\npillow; sink", vocab) ==
        std::vector<int32_t>{3, 2});
  CHECK(parse_category_list("nothing useful", vocab).empty());
  CHECK(parse_category_list("", vocab).empty());
}
