#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace t2i::png {

// Minimal deterministic PNG encoder: 8-bit RGB, one IDAT chunk (zlib level 9,
// fixed strategy), plus optional tEXt chunks. Enough for placeholder images.
struct TextChunk {
    std::string keyword;  // latin-1, 1..79 chars, no NUL
    std::string text;
};

std::string encode_rgb(std::uint32_t width, std::uint32_t height,
                       const std::vector<std::uint8_t>& rgb,
                       const std::vector<TextChunk>& texts = {});

// Returns the text of the first tEXt chunk with the given keyword, if any.
std::optional<std::string> read_text_chunk(std::string_view png_bytes, std::string_view keyword);

}  // namespace t2i::png
