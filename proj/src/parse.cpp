#include "sq/parse.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <unordered_map>

namespace sq {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string strip_decoration(std::string s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '"' || s.back() == '\''))
    s.pop_back();
  while (!s.empty() && (s.front() == '"' || s.front() == '\'')) s.erase(s.begin());
  return trim(s);
}

}  // namespace

std::optional<int> parse_index(const std::string& text, int count) {
  static const std::regex digits(R"(\d+)");
  std::smatch m;
  if (!std::regex_search(text, m, digits)) return std::nullopt;
  try {
    int v = std::stoi(m.str());
    if (v >= 0 && v < count) return v;
  } catch (const std::out_of_range&) {
  }
  return std::nullopt;
}

std::optional<std::pair<int, std::string>> parse_image_answer(const std::string& text,
                                                              int image_count) {
  static const std::regex tag(R"([Ii]mage\s*(\d+))");
  std::smatch m;
  if (!std::regex_search(text, m, tag)) return std::nullopt;
  int idx;
  try {
    idx = std::stoi(m[1].str());
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
  if (idx < 0 || idx >= image_count) return std::nullopt;

  std::string rest = m.suffix().str();
  size_t pos = 0;
  auto is_sep = [&](size_t i) {
    char c = rest[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ':' || c == ',' ||
        c == '-' || c == '"')
      return size_t{1};
    if (c == '\\' && i + 1 < rest.size() && rest[i + 1] == 'n') return size_t{2};
    return size_t{0};
  };
  while (pos < rest.size()) {
    size_t step = is_sep(pos);
    if (step == 0) break;
    pos += step;
  }
  std::string answer = trim(rest.substr(pos));
  while (!answer.empty() && answer.back() == '"') answer.pop_back();
  answer = trim(answer);
  if (answer.empty()) return std::nullopt;
  return std::make_pair(idx, answer);
}

std::vector<int32_t> parse_category_list(const std::string& text,
                                         std::span<const std::string> vocab,
                                         int* unknown) {
  std::unordered_map<std::string, int32_t> by_name;
  for (size_t i = 0; i < vocab.size(); ++i)
    by_name.emplace(lower(vocab[i]), static_cast<int32_t>(i));

  if (unknown) *unknown = 0;
  std::vector<int32_t> out;
  std::vector<bool> seen(vocab.size(), false);
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find_first_of(",\n;", start);
    if (end == std::string::npos) end = text.size();
    std::string token = text.substr(start, end - start);
    // Tolerate an echoed label such as "Evidence categories: pillow".
    if (size_t colon = token.rfind(':'); colon != std::string::npos)
      token = token.substr(colon + 1);
    token = lower(strip_decoration(token));
    if (auto it = by_name.find(token); it != by_name.end()) {
      if (!seen[it->second]) {
        out.push_back(it->second);
        seen[it->second] = true;
      }
    } else if (!token.empty() && unknown) {
      ++*unknown;
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

}  // namespace sq
