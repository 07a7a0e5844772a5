#include "t2iopt/png.hpp"

#include <zlib.h>

#include <cstring>
#include <stdexcept>

namespace t2i::png {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>(v & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_chunk(std::string& out, const char type[4], std::string_view payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.append(type, 4);
    out.append(payload);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start), static_cast<uInt>(out.size() - crc_start)));
    put_u32(out, crc);
}

}  // namespace

std::string encode_rgb(std::uint32_t width, std::uint32_t height,
                       const std::vector<std::uint8_t>& rgb,
                       const std::vector<TextChunk>& texts) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw std::invalid_argument("encode_rgb: pixel buffer size mismatch");

    // raw scanlines, filter byte 0 per row
    std::string raw;
    raw.reserve(rgb.size() + height);
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(rgb.data()) + std::size_t(y) * width * 3,
                   std::size_t(width) * 3);
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::string comp(comp_cap, '\0');
    if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) != Z_OK)
        throw std::runtime_error("encode_rgb: deflate failed");
    comp.resize(comp_cap);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32(ihdr, width);
    put_u32(ihdr, height);
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    write_chunk(out, "IHDR", ihdr);
    for (const auto& t : texts) {
        std::string payload = t.keyword;
        payload.push_back('\0');
        payload += t.text;
        write_chunk(out, "tEXt", payload);
    }
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});
    return out;
}

std::optional<std::string> read_text_chunk(std::string_view png_bytes, std::string_view keyword) {
    if (png_bytes.size() < 8) return std::nullopt;
    std::size_t pos = 8;
    const auto* data = reinterpret_cast<const unsigned char*>(png_bytes.data());
    while (pos + 12 <= png_bytes.size()) {
        std::uint32_t len = get_u32(data + pos);
        if (pos + 12 + len > png_bytes.size()) return std::nullopt;
        std::string_view type = png_bytes.substr(pos + 4, 4);
        std::string_view payload = png_bytes.substr(pos + 8, len);
        if (type == "tEXt") {
            auto nul = payload.find('\0');
            if (nul != std::string_view::npos && payload.substr(0, nul) == keyword)
                return std::string(payload.substr(nul + 1));
        }
        if (type == "IEND") break;
        pos += 12 + len;
    }
    return std::nullopt;
}

}  // namespace t2i::png
