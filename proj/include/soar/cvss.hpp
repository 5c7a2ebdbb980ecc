#pragma once

// CVSS v3.1 base-metric vectors and base-score computation.

#include <cstdint>
#include <string>
#include <string_view>

namespace soar::cvss {

enum class AttackVector : std::uint8_t { Network, Adjacent, Local, Physical };
enum class AttackComplexity : std::uint8_t { Low, High };
enum class PrivilegesRequired : std::uint8_t { None, Low, High };
enum class UserInteraction : std::uint8_t { None, Required };
enum class Scope : std::uint8_t { Unchanged, Changed };
enum class Impact : std::uint8_t { None, Low, High };

enum class SeverityBand : std::uint8_t { None, Low, Medium, High, Critical };

struct Vector {
    AttackVector attack_vector = AttackVector::Network;
    AttackComplexity attack_complexity = AttackComplexity::Low;
    PrivilegesRequired privileges_required = PrivilegesRequired::None;
    UserInteraction user_interaction = UserInteraction::None;
    Scope scope = Scope::Unchanged;
    Impact confidentiality = Impact::None;
    Impact integrity = Impact::None;
    Impact availability = Impact::None;

    bool operator==(const Vector&) const = default;
};

// Base score held as an integer count of tenths, so the one-decimal
// representation is exact by construction.
class Score {
public:
    constexpr Score() = default;
    static Score from_tenths(int tenths);

    constexpr int tenths() const noexcept { return tenths_; }
    double value() const noexcept { return tenths_ / 10.0; }
    SeverityBand band() const noexcept;
    // "8.1", "10.0", "0.0"
    std::string to_string() const;

    auto operator<=>(const Score&) const = default;

private:
    constexpr explicit Score(int tenths) : tenths_(tenths) {}
    int tenths_ = 0;
};

// Accepts the 8 base metrics in any order, case-insensitive, optionally
// preceded by a "CVSS:3.1/" or "CVSS:3.0/" prefix. Throws soar::Error with
// UnknownMetric, IllegalValue, MissingMetric or DuplicateMetric.
Vector parse_vector(std::string_view text);

// Canonical "AV:N/AC:L/PR:N/UI:N/S:C/C:H/I:H/A:H" form.
std::string to_string(const Vector& v);

Score base_score(const Vector& v) noexcept;

SeverityBand severity_band(Score s) noexcept;

// Parses a one-decimal score string such as "9.5" or "10".
Score parse_score(std::string_view text);

// Smallest one-decimal number >= x, computed on x scaled by 100000 so that
// float noise below 1e-5 cannot push a value over a tenth boundary.
// Returned as tenths.
int round_up_tenths(double x) noexcept;

std::string_view to_string(SeverityBand band) noexcept;

}  // namespace soar::cvss
