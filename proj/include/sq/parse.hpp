#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sq {

// First integer in the reply when it lies in [0, count), otherwise nothing.
std::optional<int> parse_index(const std::string& text, int count);

// "Image i \n answer" replies (literal "\n", real newlines and :,- all accepted
// as the separator). Nothing when the tag, a valid index, or the answer text
// is missing.
std::optional<std::pair<int, std::string>> parse_image_answer(const std::string& text,
                                                              int image_count);

// Comma/newline separated category names resolved against the vocabulary,
// case-insensitive, order-preserving, deduplicated. Unknown names are
// dropped; *unknown counts them when given (duplicates are not drops).
std::vector<int32_t> parse_category_list(const std::string& text,
                                         std::span<const std::string> vocab,
                                         int* unknown = nullptr);

}  // namespace sq
