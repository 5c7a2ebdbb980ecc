#include "soar/util.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "soar/error.hpp"

#ifndef SOAR_DEFAULT_DATA_DIR
#define SOAR_DEFAULT_DATA_DIR "data"
#endif

namespace soar {

Digest sha256(std::string_view bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::Io, "sha256 failed");
    }
    return out;
}

std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (auto b : d) {
        s += kHex[b >> 4];
        s += kHex[b & 0xf];
    }
    return s;
}

Digest digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) throw Error(ErrorCode::Parse, "digest length");
    Digest d{};
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw Error(ErrorCode::Parse, "digest character");
    };
    for (std::size_t i = 0; i < 32; ++i) {
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    }
    return d;
}

void Fnv1a::update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
        h_ ^= c;
        h_ *= 0x100000001b3ULL;
    }
}

void Fnv1a::update(double v) noexcept {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    update(std::string_view(buf, 8));
}

void Fnv1a::update(std::int64_t v) noexcept {
    char buf[8];
    std::memcpy(buf, &v, 8);
    update(std::string_view(buf, 8));
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw Error(ErrorCode::Parse, path.string() + ": " + ex.what());
    }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << text;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

std::filesystem::path data_dir() {
    if (const char* env = std::getenv("SOAR_DATA_DIR"); env && *env) return env;
    return SOAR_DEFAULT_DATA_DIR;
}

double round2(double x) noexcept {
    const double scaled = x * 100.0;
    const double r = std::floor(std::fabs(scaled) + 0.5 + 1e-9);
    return std::copysign(r, x) / 100.0;
}

}  // namespace soar
