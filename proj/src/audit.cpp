#include "soar/audit.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "soar/error.hpp"
#include "soar/util.hpp"

namespace soar {

// ------------------------------------------------------------------- events

namespace {

void put_field(std::string& buf, std::string_view field) {
    const std::uint64_t n = field.size();
    for (int i = 7; i >= 0; --i) buf.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
    buf.append(field);
}

}  // namespace

std::string AuditEvent::compute_hash() const {
    std::string buf;
    const Digest prev = digest_from_hex(prev_hash);
    buf.append(reinterpret_cast<const char*>(prev.data()), prev.size());
    put_field(buf, std::to_string(seq));
    put_field(buf, std::to_string(tick));
    put_field(buf, name_of(kind));
    put_field(buf, payload.dump());
    return to_hex(sha256(buf));
}

nlohmann::json AuditEvent::to_json() const {
    return {{"seq", seq}, {"tick", tick}, {"kind", kind}, {"payload", payload}, {"prev_hash", prev_hash}, {"hash", hash}};
}

std::string AuditEvent::to_line() const { return to_json().dump(); }

AuditEvent AuditEvent::parse_line(std::string_view line) {
    auto j = nlohmann::json::parse(line);
    AuditEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.tick = j.at("tick").get<Tick>();
    e.kind = j.at("kind").get<EventKind>();
    e.payload = j.at("payload");
    e.prev_hash = j.at("prev_hash").get<std::string>();
    e.hash = j.at("hash").get<std::string>();
    return e;
}

VerifyResult verify_lines(const std::vector<std::string>& lines) {
    VerifyResult r;
    std::string prev = kGenesisHash;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto broken = [&](std::string why) {
            r.ok = false;
            r.first_broken = i;
            r.reason = std::move(why);
            return r;
        };
        AuditEvent e;
        try {
            e = AuditEvent::parse_line(lines[i]);
        } catch (const std::exception& ex) {
            return broken(std::string("unparseable: ") + ex.what());
        }
        if (e.seq != i) return broken("sequence gap");
        if (e.prev_hash != prev) return broken("prev_hash does not link");
        std::string computed;
        try {
            computed = e.compute_hash();
        } catch (const std::exception& ex) {
            return broken(std::string("bad hash field: ") + ex.what());
        }
        if (computed != e.hash) return broken("hash mismatch");
        if (e.to_line() != lines[i]) return broken("non-canonical encoding");
        prev = e.hash;
        r.count = i + 1;
    }
    return r;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

VerifyResult verify_file(const std::filesystem::path& path) { return verify_lines(read_lines(path)); }

std::vector<AuditEvent> load_events(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const auto v = verify_lines(lines);
    if (!v.ok) {
        throw Error(ErrorCode::ChainCorrupt, "first broken index " + std::to_string(*v.first_broken) + ": " + v.reason);
    }
    std::vector<AuditEvent> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(AuditEvent::parse_line(l));
    return out;
}

AuditLog AuditLog::open(const std::filesystem::path& path, bool fsync) {
    AuditLog log;
    if (std::filesystem::exists(path)) log.events_ = load_events(path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
    log.out_ = std::shared_ptr<std::FILE>(f, [](std::FILE* p) { std::fclose(p); });
    log.path_ = path;
    log.fsync_ = fsync;
    return log;
}

const AuditEvent& AuditLog::append(Tick tick, EventKind kind, nlohmann::json payload) {
    AuditEvent e;
    e.seq = events_.size();
    e.tick = tick;
    e.kind = kind;
    e.payload = std::move(payload);
    e.prev_hash = tail_hash();
    e.hash = e.compute_hash();
    if (out_) {
        const std::string line = e.to_line() + "\n";
        if (std::fwrite(line.data(), 1, line.size(), out_.get()) != line.size() || std::fflush(out_.get()) != 0) {
            throw Error(ErrorCode::Io, "audit append failed");
        }
        if (fsync_) ::fsync(::fileno(out_.get()));
    }
    events_.push_back(std::move(e));
    if (listener_) listener_(events_.back());
    return events_.back();
}

// ------------------------------------------------------------- notification

std::vector<Subscriber> parse_subscribers(const nlohmann::json& j) {
    std::vector<Subscriber> out;
    for (const auto& s : j) {
        out.push_back({s.at("name").get<std::string>(), s.at("kind").get<SinkKind>(), s.value("target", "")});
    }
    return out;
}

nlohmann::json DeliveryRecord::to_json() const {
    return {{"subscriber", subscriber}, {"event_seq", event_seq}, {"attempts", attempts}, {"delivered", delivered},
            {"duplicate", duplicate},   {"backoff_ms", backoff_ms}, {"error", error}};
}

AttemptResult default_transport(const Subscriber& s, const std::string& body, std::string& error) {
    if (s.kind == SinkKind::Log) {
        if (s.target.empty()) return AttemptResult::Delivered;
        std::ofstream out(s.target, std::ios::app);
        if (!out) {
            error = "cannot open " + s.target;
            return AttemptResult::Failed;
        }
        out << body << "\n";
        return out ? AttemptResult::Delivered : AttemptResult::Failed;
    }
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(s.target, m, url_re)) {
        error = "bad webhook url " + s.target;
        return AttemptResult::Failed;
    }
    httplib::Client cli(m[1].str());
    cli.set_connection_timeout(1, 0);
    cli.set_read_timeout(2, 0);
    const std::string path = m[2].matched ? m[2].str() : "/";
    auto res = cli.Post(path, body, "application/json");
    if (!res) {
        error = httplib::to_string(res.error());
        // Once the request went out, the sink may have processed it.
        return res.error() == httplib::Error::Read ? AttemptResult::Ambiguous : AttemptResult::Failed;
    }
    if (res->status >= 200 && res->status < 300) return AttemptResult::Delivered;
    error = "status " + std::to_string(res->status);
    return AttemptResult::Failed;
}

std::vector<DeliveryRecord> notify(const std::vector<Subscriber>& subscribers, const AuditEvent& event,
                                   const Transport& transport, const RetryPolicy& retry, const Sleeper& sleep) {
    const std::string body = nlohmann::json{{"seq", event.seq},
                                            {"tick", event.tick},
                                            {"kind", event.kind},
                                            {"payload", event.payload},
                                            {"hash", event.hash}}
                                 .dump();
    std::vector<DeliveryRecord> out;
    for (const auto& s : subscribers) {
        DeliveryRecord rec;
        rec.subscriber = s.name;
        rec.event_seq = event.seq;
        bool ambiguous = false;
        for (int attempt = 0; attempt < std::max(1, retry.max_attempts); ++attempt) {
            if (attempt > 0) {
                const int delay = std::min(retry.max_backoff_ms, retry.base_backoff_ms << std::min(attempt - 1, 20));
                rec.backoff_ms.push_back(delay);
                if (sleep) sleep(delay);
            }
            ++rec.attempts;
            std::string err;
            AttemptResult res;
            try {
                res = transport(s, body, err);
            } catch (const std::exception& e) {
                res = AttemptResult::Failed;
                err = e.what();
            }
            if (res == AttemptResult::Delivered) {
                rec.delivered = true;
                rec.duplicate = ambiguous;
                rec.error.clear();
                break;
            }
            ambiguous = ambiguous || res == AttemptResult::Ambiguous;
            rec.error = err;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ----------------------------------------------------------------- reports

ControlTags ControlTags::from_json(const nlohmann::json& j) {
    ControlTags t;
    for (const auto& [fw, kinds] : j.at("frameworks").items()) {
        const auto f = parse_enum<Framework>(fw);
        for (const auto& [kind, ids] : kinds.items()) {
            t.map_[{f, parse_enum<EventKind>(kind)}] = ids.get<std::vector<std::string>>();
        }
    }
    return t;
}

ControlTags ControlTags::load_default() { return from_json(read_json_file(data_dir() / "control_tags.json")); }

std::vector<std::string> ControlTags::controls(Framework f, EventKind k) const {
    auto it = map_.find({f, k});
    return it == map_.end() ? std::vector<std::string>{} : it->second;
}

namespace {

std::optional<std::string> finding_of(const AuditEvent& e) {
    if (e.payload.contains("finding_id")) return e.payload["finding_id"].get<std::string>();
    if (e.payload.contains("finding")) return e.payload["finding"].at("finding_id").get<std::string>();
    return std::nullopt;
}

}  // namespace

ReducedState reduce(const std::vector<AuditEvent>& events) {
    ReducedState s;
    for (const auto& e : events) {
        if (e.payload.contains("finding")) s.findings[e.payload["finding"].at("finding_id").get<std::string>()] = e.payload["finding"];
        if (e.payload.contains("plan")) s.plans[e.payload["plan"].at("plan_id").get<std::string>()] = e.payload["plan"];
        if (e.payload.contains("decision"))
            s.decisions[e.payload["decision"].at("plan_id").get<std::string>()] = e.payload["decision"];
        s.last_seq = e.seq;
        s.last_tick = e.tick;
    }
    return s;
}

nlohmann::json ReducedState::to_json() const {
    return {{"findings", findings}, {"plans", plans}, {"decisions", decisions}, {"last_seq", last_seq},
            {"last_tick", last_tick}};
}

nlohmann::json generate_report(const std::vector<AuditEvent>& events, Framework framework, const ControlTags& tags,
                               const std::string& run_id) {
    std::map<std::string, nlohmann::json> chains;
    std::vector<std::string> order;
    std::map<std::string, std::string> plan_finding;
    std::map<std::uint64_t, std::string> seq_finding;
    for (const auto& e : events) {
        auto fid = finding_of(e);
        if (fid && e.payload.contains("plan")) plan_finding[e.payload["plan"].at("plan_id").get<std::string>()] = *fid;
        if (!fid && e.payload.contains("plan_id")) {
            const auto it = plan_finding.find(e.payload["plan_id"].get<std::string>());
            if (it != plan_finding.end()) fid = it->second;
        }
        if (!fid && e.payload.contains("event_seq")) {
            const auto it = seq_finding.find(e.payload["event_seq"].get<std::uint64_t>());
            if (it != seq_finding.end()) fid = it->second;
        }
        if (!fid) continue;
        seq_finding[e.seq] = *fid;
        if (!chains.count(*fid)) {
            chains[*fid] = nlohmann::json::array();
            order.push_back(*fid);
        }
        chains[*fid].push_back(
            {{"seq", e.seq}, {"tick", e.tick}, {"kind", e.kind}, {"controls", tags.controls(framework, e.kind)}});
    }
    const auto state = reduce(events);

    nlohmann::json findings = nlohmann::json::array();
    nlohmann::json open = nlohmann::json::array();
    std::map<std::string, int> coverage;
    for (const auto& fid : order) {
        const auto it = state.findings.find(fid);
        const nlohmann::json doc = it == state.findings.end() ? nlohmann::json::object() : it->second;
        const std::string lifecycle = doc.value("lifecycle", "Detected");
        nlohmann::json entry = {{"finding_id", fid},
                                {"asset_id", doc.value("asset_id", "")},
                                {"cve_id", doc.contains("cve_id") ? doc["cve_id"] : nlohmann::json(nullptr)},
                                {"final_lifecycle", lifecycle},
                                {"events", chains[fid]}};
        for (const auto& ev : chains[fid]) {
            for (const auto& c : ev["controls"]) coverage[c.get<std::string>()]++;
        }
        findings.push_back(entry);
        if (lifecycle != "Resolved") open.push_back({{"finding_id", fid}, {"lifecycle", lifecycle}});
    }
    nlohmann::json period = nlohmann::json::object();
    period["from_tick"] = events.empty() ? 0 : events.front().tick;
    period["to_tick"] = events.empty() ? 0 : events.back().tick;
    return {{"run_id", run_id},
            {"framework", framework},
            {"period", period},
            {"event_count", events.size()},
            {"chain_head", events.empty() ? kGenesisHash : events.back().hash},
            {"findings", findings},
            {"open_issues", open},
            {"control_coverage", coverage},
            {"note", "Control mappings are illustrative and do not assert regulatory compliance."}};
}

// ----------------------------------------------------------------- metrics

nlohmann::json RunMetrics::to_json() const {
    nlohmann::json vc = nlohmann::json::object();
    for (const auto& [k, v] : vuln_containment) vc[k] = v;
    return {{"scenario_id", scenario_id},
            {"seed", seed},
            {"mode", mode},
            {"ticks", ticks},
            {"asset_count", asset_count},
            {"containment_minutes", opt_json(containment_minutes)},
            {"patching_minutes", opt_json(patching_minutes)},
            {"ddos_mitigation_minutes", opt_json(ddos_mitigation_minutes)},
            {"detection_accuracy_pct", opt_json(detection_accuracy_pct)},
            {"false_positives", false_positives},
            {"manual_intervention_pct", opt_json(manual_intervention_pct)},
            {"human_remediation_pct", opt_json(human_remediation_pct)},
            {"downtime_minutes_per_attack", opt_json(downtime_minutes_per_attack)},
            {"data_loss_reduction_pct", opt_json(data_loss_reduction_pct)},
            {"uptime_pct", opt_json(uptime_pct)},
            {"breaches", breaches},
            {"incident_response_minutes", opt_json(incident_response_minutes)},
            {"vuln_containment", vc}};
}

RunMetrics RunMetrics::from_json(const nlohmann::json& j) {
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j[k].is_null()) return std::nullopt;
        return j[k].get<double>();
    };
    RunMetrics m;
    m.scenario_id = j.at("scenario_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mode = j.value("mode", "");
    m.ticks = j.value("ticks", Tick{0});
    m.asset_count = j.value("asset_count", std::size_t{0});
    m.containment_minutes = opt("containment_minutes");
    m.patching_minutes = opt("patching_minutes");
    m.ddos_mitigation_minutes = opt("ddos_mitigation_minutes");
    m.detection_accuracy_pct = opt("detection_accuracy_pct");
    m.false_positives = j.value("false_positives", 0);
    m.manual_intervention_pct = opt("manual_intervention_pct");
    m.human_remediation_pct = opt("human_remediation_pct");
    m.downtime_minutes_per_attack = opt("downtime_minutes_per_attack");
    m.data_loss_reduction_pct = opt("data_loss_reduction_pct");
    m.uptime_pct = opt("uptime_pct");
    m.breaches = j.value("breaches", 0);
    m.incident_response_minutes = opt("incident_response_minutes");
    const auto vc = j.value("vuln_containment", nlohmann::json::object());
    for (const auto& [k, v] : vc.items()) {
        m.vuln_containment[k] = v.get<Tick>();
    }
    return m;
}

const std::vector<std::string>& comparison_row_names() {
    static const std::vector<std::string> names = {
        "Breach Containment Time (days)",
        "Patching Time (weeks)",
        "DDoS Mitigation (Time)",
        "Average Cost of a Data Breach ($M)",
        "Detection Accuracy for Critical Threats",
        "False Positives",
        "Manual Intervention for Threat Response",
        "Potential Savings from Improved Accuracy",
        "Average Downtime per Cyberattack (days)",
        "Data Loss Reduction (%)",
        "Uptime (%)",
        "Regulatory Risk Reduction (%)",
        "Compliance Standards (ISO, NIST, CIS)",
        "Lower Insurance Premiums",
        "Number of Breaches",
        "Incident Response Time (days)",
        "Human Intervention for Remediation (%)",
    };
    return names;
}

double savings_pct(double traditional, double aisa, bool higher_is_better) {
    const double diff = higher_is_better ? aisa - traditional : traditional - aisa;
    return diff / traditional * 100.0;
}

nlohmann::json MetricsComparison::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    auto cell = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json("not measured");
    };
    for (const auto& r : rows) {
        out.push_back({{"metric", r.metric},
                       {"unit", r.unit},
                       {"traditional", cell(r.traditional)},
                       {"aisa", cell(r.aisa)},
                       {"savings_pct", cell(r.savings_pct)},
                       {"higher_is_better", r.higher_is_better}});
    }
    return {{"rows", out}};
}

const ComparisonRow* MetricsComparison::row(std::string_view metric) const {
    for (const auto& r : rows) {
        if (r.metric == metric) return &r;
    }
    return nullptr;
}

MetricsComparison compare_runs(const RunMetrics& t, const RunMetrics& a) {
    if (t.scenario_id != a.scenario_id || t.seed != a.seed) {
        throw Error(ErrorCode::ScenarioMismatch, t.scenario_id + "#" + std::to_string(t.seed) + " vs " + a.scenario_id +
                                                     "#" + std::to_string(a.seed));
    }
    using Get = std::function<std::optional<double>(const RunMetrics&)>;
    auto scaled = [](std::optional<double> RunMetrics::*field, double div) -> Get {
        return [field, div](const RunMetrics& m) -> std::optional<double> {
            auto v = m.*field;
            if (!v) return std::nullopt;
            return *v / div;
        };
    };
    auto count = [](int RunMetrics::*field) -> Get {
        return [field](const RunMetrics& m) -> std::optional<double> { return static_cast<double>(m.*field); };
    };
    const Get none = [](const RunMetrics&) -> std::optional<double> { return std::nullopt; };

    struct Spec {
        const char* unit;
        Get get;
        bool higher;
    };
    const std::vector<Spec> specs = {
        {"days", scaled(&RunMetrics::containment_minutes, 1440.0), false},
        {"weeks", scaled(&RunMetrics::patching_minutes, 10080.0), false},
        {"minutes", scaled(&RunMetrics::ddos_mitigation_minutes, 1.0), false},
        {"$M", none, false},
        {"%", scaled(&RunMetrics::detection_accuracy_pct, 1.0), true},
        {"count", count(&RunMetrics::false_positives), false},
        {"%", scaled(&RunMetrics::manual_intervention_pct, 1.0), false},
        {"$M", none, false},
        {"days", scaled(&RunMetrics::downtime_minutes_per_attack, 1440.0), false},
        {"%", scaled(&RunMetrics::data_loss_reduction_pct, 1.0), true},
        {"%", scaled(&RunMetrics::uptime_pct, 1.0), true},
        {"%", none, true},
        {"", none, true},
        {"", none, true},
        {"count", count(&RunMetrics::breaches), false},
        {"days", scaled(&RunMetrics::incident_response_minutes, 1440.0), false},
        {"%", scaled(&RunMetrics::human_remediation_pct, 1.0), false},
    };

    MetricsComparison c;
    const auto& names = comparison_row_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        ComparisonRow r;
        r.metric = names[i];
        r.unit = specs[i].unit;
        r.higher_is_better = specs[i].higher;
        r.traditional = specs[i].get(t);
        r.aisa = specs[i].get(a);
        if (r.traditional && r.aisa && *r.traditional != 0.0) {
            r.savings_pct = savings_pct(*r.traditional, *r.aisa, r.higher_is_better);
        }
        c.rows.push_back(std::move(r));
    }
    return c;
}

}  // namespace soar
