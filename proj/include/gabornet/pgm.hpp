#pragma once

// Binary PGM (P5) I/O. Writes 16-bit big-endian samples with maxval 65535,
// value = round(pixel * 65535). Reads 8- or 16-bit P5, scaled to [0, 1].

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "gabornet/errors.hpp"
#include "gabornet/wavefield.hpp"

namespace gabornet {

inline constexpr std::uint32_t kPgmMaxval16 = 65535;

inline std::uint16_t quantize16(double v) {
    if (!(v >= 0.0) || v > 1.0) throw ParameterError("pixel value outside [0, 1] cannot be stored as PGM");
    return static_cast<std::uint16_t>(std::lround(v * kPgmMaxval16));
}

/// The image exactly as it will read back after a 16-bit PGM round trip.
inline RealImage quantized16(const RealImage& image) {
    std::vector<double> out(image.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<double>(quantize16(image.values()[i])) / kPgmMaxval16;
    }
    return RealImage(image.n(), std::move(out));
}

inline std::string encode_pgm16(const RealImage& image) {
    std::string header = "P5\n" + std::to_string(image.n()) + " " + std::to_string(image.n()) + "\n65535\n";
    std::string bytes;
    bytes.reserve(header.size() + 2 * image.size());
    bytes += header;
    for (double v : image.values()) {
        const std::uint16_t q = quantize16(v);
        bytes.push_back(static_cast<char>(q >> 8));
        bytes.push_back(static_cast<char>(q & 0xFF));
    }
    return bytes;
}

inline void write_pgm16(const std::filesystem::path& path, const RealImage& image) {
    const std::string bytes = encode_pgm16(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pgm_token(const std::string& bytes, std::size_t& pos, const std::string& where) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw IoError("truncated PGM header: " + where);
    return bytes.substr(start, pos - start);
}

inline std::size_t pgm_number(const std::string& token, const std::string& where) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(token, &used);
    } catch (const std::exception&) {
        throw IoError("malformed PGM header field '" + token + "': " + where);
    }
    if (used != token.size()) throw IoError("malformed PGM header field '" + token + "': " + where);
    return v;
}

} // namespace detail

/// Parses a binary PGM held in memory. `where` labels error messages.
inline RealImage decode_pgm(const std::string& bytes, const std::string& where = "<memory>") {
    std::size_t pos = 0;
    if (detail::pgm_token(bytes, pos, where) != "P5") throw IoError("not a binary PGM (expected P5): " + where);
    const std::size_t width = detail::pgm_number(detail::pgm_token(bytes, pos, where), where);
    const std::size_t height = detail::pgm_number(detail::pgm_token(bytes, pos, where), where);
    const std::size_t maxval = detail::pgm_number(detail::pgm_token(bytes, pos, where), where);
    if (width == 0 || height == 0) throw IoError("PGM has zero extent: " + where);
    if (width != height) {
        throw IoError("PGM must be square, got " + std::to_string(width) + "x" + std::to_string(height) + ": " +
                      where);
    }
    if (maxval == 0 || maxval > 65535) throw IoError("PGM maxval out of range: " + where);
    ++pos; // single whitespace byte before the raster
    const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
    const std::size_t count = width * height;
    if (bytes.size() < pos + count * sample_bytes) throw IoError("truncated PGM raster: " + where);
    std::vector<double> values(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t s = sample_bytes == 1 ? p[i] : (std::uint32_t{p[2 * i]} << 8) | p[2 * i + 1];
        if (s > maxval) throw IoError("PGM sample exceeds maxval: " + where);
        values[i] = static_cast<double>(s) / static_cast<double>(maxval);
    }
    return RealImage(width, std::move(values));
}

inline RealImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_pgm(bytes, path.string());
}

} // namespace gabornet
