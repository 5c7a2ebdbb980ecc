#include "soar/cvss.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>

#include "soar/error.hpp"

namespace soar::cvss {

namespace {

constexpr std::array<std::string_view, 8> kMetricOrder = {"AV", "AC", "PR", "UI",
                                                          "S",  "C",  "I",  "A"};

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

double weight(AttackVector av) {
    switch (av) {
        case AttackVector::Network: return 0.85;
        case AttackVector::Adjacent: return 0.62;
        case AttackVector::Local: return 0.55;
        case AttackVector::Physical: return 0.2;
    }
    return 0.0;
}

double weight(AttackComplexity ac) { return ac == AttackComplexity::Low ? 0.77 : 0.44; }

double weight(PrivilegesRequired pr, Scope scope) {
    switch (pr) {
        case PrivilegesRequired::None: return 0.85;
        case PrivilegesRequired::Low: return scope == Scope::Changed ? 0.68 : 0.62;
        case PrivilegesRequired::High: return scope == Scope::Changed ? 0.5 : 0.27;
    }
    return 0.0;
}

double weight(UserInteraction ui) { return ui == UserInteraction::None ? 0.85 : 0.62; }

double weight(Impact cia) {
    switch (cia) {
        case Impact::None: return 0.0;
        case Impact::Low: return 0.22;
        case Impact::High: return 0.56;
    }
    return 0.0;
}

char letter(AttackVector v) { return "NALP"[static_cast<int>(v)]; }
char letter(AttackComplexity v) { return "LH"[static_cast<int>(v)]; }
char letter(PrivilegesRequired v) { return "NLH"[static_cast<int>(v)]; }
char letter(UserInteraction v) { return "NR"[static_cast<int>(v)]; }
char letter(Scope v) { return "UC"[static_cast<int>(v)]; }
char letter(Impact v) { return "NLH"[static_cast<int>(v)]; }

// Index of `value` in `legal`, or nullopt.
std::optional<int> pick(std::string_view legal, const std::string& value) {
    if (value.size() != 1) return std::nullopt;
    auto pos = legal.find(value[0]);
    if (pos == std::string_view::npos) return std::nullopt;
    return static_cast<int>(pos);
}

}  // namespace

Score Score::from_tenths(int tenths) {
    if (tenths < 0 || tenths > 100) {
        throw Error(ErrorCode::IllegalValue, "score tenths " + std::to_string(tenths));
    }
    return Score(tenths);
}

SeverityBand Score::band() const noexcept { return severity_band(*this); }

std::string Score::to_string() const {
    return std::to_string(tenths_ / 10) + "." + std::to_string(tenths_ % 10);
}

Vector parse_vector(std::string_view text) {
    std::string input = upper(text);
    std::string_view rest = input;
    for (std::string_view prefix : {"CVSS:3.1/", "CVSS:3.0/"}) {
        if (rest.starts_with(prefix)) {
            rest.remove_prefix(prefix.size());
            break;
        }
    }

    std::array<std::optional<int>, 8> seen{};
    while (!rest.empty()) {
        auto slash = rest.find('/');
        std::string_view token = rest.substr(0, slash);
        rest = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash + 1);

        auto colon = token.find(':');
        std::string name(token.substr(0, colon));
        std::string value = colon == std::string_view::npos ? std::string{}
                                                            : std::string(token.substr(colon + 1));
        auto it = std::find(kMetricOrder.begin(), kMetricOrder.end(), name);
        if (it == kMetricOrder.end()) throw Error(ErrorCode::UnknownMetric, std::string(token));
        auto idx = static_cast<std::size_t>(it - kMetricOrder.begin());
        if (seen[idx]) throw Error(ErrorCode::DuplicateMetric, name);

        static constexpr std::array<std::string_view, 8> kLegal = {"NALP", "LH",  "NLH", "NR",
                                                                   "UC",   "NLH", "NLH", "NLH"};
        auto v = pick(kLegal[idx], value);
        if (!v) throw Error(ErrorCode::IllegalValue, std::string(token));
        seen[idx] = v;
    }

    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw Error(ErrorCode::MissingMetric, std::string(kMetricOrder[i]));
    }

    Vector v;
    v.attack_vector = static_cast<AttackVector>(*seen[0]);
    v.attack_complexity = static_cast<AttackComplexity>(*seen[1]);
    v.privileges_required = static_cast<PrivilegesRequired>(*seen[2]);
    v.user_interaction = static_cast<UserInteraction>(*seen[3]);
    v.scope = static_cast<Scope>(*seen[4]);
    v.confidentiality = static_cast<Impact>(*seen[5]);
    v.integrity = static_cast<Impact>(*seen[6]);
    v.availability = static_cast<Impact>(*seen[7]);
    return v;
}

std::string to_string(const Vector& v) {
    std::string out;
    out.reserve(35);
    auto add = [&](std::string_view name, char value) {
        if (!out.empty()) out += '/';
        out += name;
        out += ':';
        out += value;
    };
    add("AV", letter(v.attack_vector));
    add("AC", letter(v.attack_complexity));
    add("PR", letter(v.privileges_required));
    add("UI", letter(v.user_interaction));
    add("S", letter(v.scope));
    add("C", letter(v.confidentiality));
    add("I", letter(v.integrity));
    add("A", letter(v.availability));
    return out;
}

int round_up_tenths(double x) noexcept {
    auto scaled = static_cast<long long>(std::llround(x * 100000.0));
    if (scaled % 10000 == 0) return static_cast<int>(scaled / 10000);
    return static_cast<int>(scaled / 10000 + 1);
}

Score base_score(const Vector& v) noexcept {
    const bool changed = v.scope == Scope::Changed;
    const double iss = 1.0 - (1.0 - weight(v.confidentiality)) * (1.0 - weight(v.integrity)) *
                                 (1.0 - weight(v.availability));
    const double impact = changed ? 7.52 * (iss - 0.029) - 3.25 * std::pow(iss - 0.02, 15)
                                  : 6.42 * iss;
    const double exploitability = 8.22 * weight(v.attack_vector) * weight(v.attack_complexity) *
                                  weight(v.privileges_required, v.scope) *
                                  weight(v.user_interaction);
    if (impact <= 0.0) return Score::from_tenths(0);

    const double raw = changed ? std::min(1.08 * (impact + exploitability), 10.0)
                               : std::min(impact + exploitability, 10.0);
    return Score::from_tenths(std::min(round_up_tenths(raw), 100));
}

SeverityBand severity_band(Score s) noexcept {
    const int t = s.tenths();
    if (t == 0) return SeverityBand::None;
    if (t < 40) return SeverityBand::Low;
    if (t < 70) return SeverityBand::Medium;
    if (t < 90) return SeverityBand::High;
    return SeverityBand::Critical;
}

Score parse_score(std::string_view text) {
    std::string s(text);
    auto dot = s.find('.');
    try {
        std::size_t used = 0;
        int whole = std::stoi(s.substr(0, dot), &used);
        if (used != (dot == std::string::npos ? s.size() : dot)) throw std::invalid_argument(s);
        int frac = 0;
        if (dot != std::string::npos) {
            std::string f = s.substr(dot + 1);
            if (f.size() != 1 || !std::isdigit(static_cast<unsigned char>(f[0]))) {
                throw std::invalid_argument(s);
            }
            frac = f[0] - '0';
        }
        return Score::from_tenths(whole * 10 + frac);
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::IllegalValue, "score '" + s + "'");
    }
}

std::string_view to_string(SeverityBand band) noexcept {
    switch (band) {
        case SeverityBand::None: return "None";
        case SeverityBand::Low: return "Low";
        case SeverityBand::Medium: return "Medium";
        case SeverityBand::High: return "High";
        case SeverityBand::Critical: return "Critical";
    }
    return "None";
}

}  // namespace soar::cvss
