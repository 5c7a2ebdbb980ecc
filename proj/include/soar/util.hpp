#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace soar {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);
Digest digest_from_hex(std::string_view hex);

// Incremental FNV-1a, used for cheap trajectory fingerprints.
class Fnv1a {
public:
    void update(std::string_view bytes) noexcept;
    void update(double v) noexcept;
    void update(std::int64_t v) noexcept;
    std::uint64_t value() const noexcept { return h_; }
    void reset(std::uint64_t v) noexcept { h_ = v; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

// Bundled data directory: $SOAR_DATA_DIR, else the compiled-in default.
std::filesystem::path data_dir();

// Two-decimal rounding, half away from zero, tolerant of binary noise.
double round2(double x) noexcept;

// null for an empty optional.
template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace soar
