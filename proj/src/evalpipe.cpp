#include "dyncfg/evalpipe.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "dyncfg/hooks.hpp"

namespace dyncfg {

const char* to_string(Validation v) {
    switch (v) {
        case Validation::Pass: return "pass";
        case Validation::Fail: return "fail";
        case Validation::Skipped: return "skipped";
    }
    return "?";
}

namespace {

std::shared_ptr<const BinaryImage> load_main(const std::string& binary) {
    auto bytes = read_host_file(binary);
    if (!bytes) throw IoError("cannot read " + binary);
    return std::make_shared<const BinaryImage>(parse_image(*bytes));
}

// One exploration with its own solver, manager, tracker and hooks.
struct Exploration {
    std::shared_ptr<SessionConfig> config;
    std::unique_ptr<Solver> solver;
    std::unique_ptr<ExplorationManager> manager;
    std::unique_ptr<Tracker> tracker;
    std::unique_ptr<HookRegistry> hooks;
    ExplorationResult result;
    std::size_t initial_pool = 0;
    std::set<std::string> initial_names;

    std::vector<const SimState*> states() const {
        std::vector<const SimState*> out;
        for (const auto& s : manager->finished) out.push_back(&s);
        for (const auto& s : manager->errored) out.push_back(&s);
        for (const auto& s : manager->active) out.push_back(&s);
        for (const auto& s : manager->deferred) out.push_back(&s);
        return out;
    }

    // Every image loaded on any path, main first, in order of first appearance.
    std::vector<const LoadedImage*> images() const {
        std::vector<const LoadedImage*> out;
        std::set<std::string> seen;
        for (const SimState* s : states())
            for (const auto& li : s->images)
                if (seen.insert(li.key).second) out.push_back(&li);
        return out;
    }
};

std::unique_ptr<Exploration> explore(std::shared_ptr<const BinaryImage> main, const std::string& binary,
                                     std::shared_ptr<SessionConfig> config, const PipelineOptions& opts) {
    auto e = std::make_unique<Exploration>();
    e->config = std::move(config);
    e->solver = std::make_unique<Solver>(opts.seed);
    e->manager = std::make_unique<ExplorationManager>(opts.limits, e->solver.get());
    e->tracker = std::make_unique<Tracker>(opts.cff_threshold);
    e->hooks = std::make_unique<HookRegistry>();
    e->tracker->attach(*e->manager);
    e->manager->set_hooks(e->hooks.get());
    SimState entry = e->manager->make_entry_state(std::move(main), binary, e->config);
    {
        SimState probe = entry;
        for (const auto& n : get_preloaded_candidates(probe, e->config->search_paths).names()) e->initial_names.insert(n);
        e->initial_pool = e->initial_names.size();
    }
    e->manager->add_state(std::move(entry));
    e->result = e->manager->run();
    return e;
}

bool has_resolution_failures(const Exploration& e) {
    for (const SimState* s : e.states())
        for (const auto& ev : s->events())
            if (ev->kind == EventKind::Warning && ev->payload.value("what", "") == "resolution-failure") return true;
    return false;
}

std::vector<std::string> collect_warnings(const Exploration& e) {
    std::set<std::string> out;
    for (const SimState* s : e.states())
        for (const auto& ev : s->events()) {
            if (ev->kind != EventKind::Warning) continue;
            std::string w = ev->payload.value("what", "warning");
            if (ev->payload.contains("fn")) w += " " + ev->payload["fn"].get<std::string>();
            out.insert(w);
        }
    for (const auto& w : e.manager->warnings) out.insert(w);
    return {out.begin(), out.end()};
}

Witness derive_witness(const Exploration& e) {
    Witness w;
    for (const SimState* s : e.states()) {
        if (s->images.size() < 2) continue;
        std::map<std::string, std::map<std::size_t, std::uint64_t>> env;
        std::map<std::size_t, std::uint64_t> net;
        for (const auto& [name, value] : s->model().values) {
            auto us = name.rfind('_');
            if (us == std::string::npos) continue;
            std::size_t idx = 0;
            try {
                idx = std::stoul(name.substr(us + 1));
            } catch (const std::exception&) {
                continue;
            }
            if (name.rfind("env_", 0) == 0 && us > 4) env[name.substr(4, us - 4)][idx] = value;
            else if (name.rfind("net_", 0) == 0) net[idx] = value;
            else if (name.rfind("time_", 0) == 0 && !w.time) w.time = value;
        }
        for (const auto& [var, bytes] : env) {
            if (w.env.count(var)) continue;
            std::string text;
            for (std::size_t i = 0; bytes.count(i) && (bytes.at(i) & 0xFF); ++i) text += static_cast<char>(bytes.at(i));
            w.env[var] = text;
        }
        if (w.network.empty() && !net.empty()) {
            const std::size_t n = net.rbegin()->first + 1;
            for (std::size_t i = 0; i < n; ++i) w.network.push_back(static_cast<std::uint8_t>(net.count(i) ? net[i] : 0));
        }
    }
    return w;
}

Witness merge_witness(const Witness& derived, const std::optional<Witness>& given) {
    Witness w = derived;
    if (!given) return w;
    for (const auto& [k, v] : given->env) w.env[k] = v;
    if (!given->network.empty()) w.network = given->network;
    if (given->time) w.time = given->time;
    return w;
}

nlohmann::json discovery_chain(const Exploration& e, const std::string& key) {
    nlohmann::json chain = nlohmann::json::array();
    for (const SimState* s : e.states()) {
        const LoadedImage* li = s->image_by_key(key);
        if (!li) continue;
        for (const auto& ev : s->events()) {
            const auto& p = ev->payload;
            const bool at_site = p.contains("site") && p["site"].is_number() && p["site"].get<std::uint64_t>() == li->load_site;
            if ((ev->kind == EventKind::Taint && at_site) || (ev->kind == EventKind::Hook && at_site && p.contains("fn")) ||
                (ev->kind == EventKind::Load && p.value("key", "") == key))
                chain.push_back(ev->to_json());
        }
        break;
    }
    return chain;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

nlohmann::json metrics_json(const CfgMetrics& m) {
    return {{"nodes", m.nodes}, {"edges", m.edges}, {"functions", m.functions}, {"objects", m.loaded_objects}};
}

}  // namespace

std::vector<std::string> BenchReport::discovered_names() const {
    std::vector<std::string> out;
    for (const auto& d : discovered) out.push_back(d.name);
    return out;
}

nlohmann::json BenchReport::to_json() const {
    nlohmann::json disc = nlohmann::json::array();
    for (const auto& d : discovered) disc.push_back({{"path", d.path}, {"mechanism", d.mechanism}, {"chain", d.chain}});
    nlohmann::json disp = nlohmann::json::array();
    for (const auto& d : dispatchers) disp.push_back(d.to_json());
    nlohmann::json sm = nlohmann::json::array();
    for (const auto& r : smc) sm.push_back(r.to_json());
    return {{"benchmark", benchmark},
            {"steps", steps},
            {"seconds", round2(seconds)},
            {"static", metrics_json(static_metrics)},
            {"module", metrics_json(module_metrics)},
            {"discovered", disc},
            {"validation", to_string(validation)},
            {"dispatchers", disp},
            {"smc", sm},
            {"warnings", warnings}};
}

Cfg static_baseline(const std::string& binary) {
    auto main = load_main(binary);
    return recover_static(layout_images({CfgImage{main, 0, binary, base_name(binary)}}));
}

Analysis analyze(const std::string& binary, const PipelineOptions& opts, const std::string& name) {
    Analysis a;
    BenchReport& r = a.report;
    r.benchmark = name.empty() ? base_name(binary) : name;

    // Phase 1: static baseline.
    auto main = load_main(binary);
    a.static_cfg = recover_static(layout_images({CfgImage{main, 0, binary, base_name(binary)}}));
    r.static_metrics = metrics(a.static_cfg);

    // Phase 2: exploration with hooks, then recursive scan and re-exploration.
    auto config = std::make_shared<SessionConfig>();
    config->search_paths = opts.search_paths;
    config->extra_candidates = opts.extra_candidates;
    std::unique_ptr<Exploration> e = explore(main, binary, config, opts);
    std::size_t steps = e->result.steps;
    std::size_t unknowns = e->result.unknowns;
    std::size_t rounds = 0;
    while (rounds < opts.max_rounds && has_resolution_failures(*e)) {
        std::vector<std::string> found;
        for (const LoadedImage* li : e->images()) {
            if (li->mechanism == "main") continue;
            for (const auto& seg : li->image->segments)
                for (const auto& str : scan_library_strings(seg.data))
                    if (!e->initial_names.count(str) &&
                        std::find(found.begin(), found.end(), str) == found.end())
                        found.push_back(str);
        }
        if (found.empty()) break;
        auto next = std::make_shared<SessionConfig>(*config);
        for (const auto& f : found)
            if (std::find(next->extra_candidates.begin(), next->extra_candidates.end(), f) == next->extra_candidates.end())
                next->extra_candidates.push_back(f);
        if (next->extra_candidates.size() == config->extra_candidates.size()) break;
        config = next;
        e = explore(main, binary, config, opts);
        steps += e->result.steps;
        unknowns += e->result.unknowns;
        ++rounds;
    }
    r.steps = steps;
    r.solver_unknowns = unknowns;
    r.rounds = rounds;
    r.warnings = collect_warnings(*e);
    if (e->result.budget_exhausted) r.warnings.push_back("step budget exhausted");
    r.derived_witness = derive_witness(*e);

    // Phase 3: module CFG over every loaded image.
    std::vector<CfgImage> images;
    for (const LoadedImage* li : e->images()) {
        images.push_back({li->image, 0, li->key, li->name});
        if (li->mechanism == "main") continue;
        Discovery d;
        d.path = li->path;
        d.name = li->name;
        d.mechanism = li->mechanism;
        d.chain = discovery_chain(*e, li->key);
        r.discovered.push_back(std::move(d));
    }
    a.module_cfg = build_module_cfg(layout_images(images), e->tracker->edges());
    r.module_metrics = metrics(a.module_cfg);
    r.dispatchers = e->tracker->detect_cff_dispatchers(a.module_cfg);
    r.smc.assign(e->tracker->smc_reports().begin(), e->tracker->smc_reports().end());
    a.rop_redirects = e->tracker->rop_redirects();
    return a;
}

ValidationResult concrete_validate(const std::string& binary, const std::optional<Witness>& witness,
                                   const std::set<std::string>& expected, const PipelineOptions& opts) {
    ValidationResult v;
    if (!witness) {
        v.status = Validation::Skipped;
        v.reason = "WitnessMissing";
        return v;
    }
    auto config = std::make_shared<SessionConfig>();
    config->search_paths = opts.search_paths;
    config->concrete = true;
    config->witness_env = witness->env;
    config->witness_network = witness->network;
    config->witness_time = witness->time;
    PipelineOptions o = opts;
    auto e = explore(load_main(binary), binary, config, o);
    const std::string main_name = base_name(binary);
    for (const SimState* s : e->states()) {
        for (const auto& li : s->images)
            if (li.mechanism != "main") v.loaded.insert(li.name);
        for (const auto& ev : s->events())
            if (ev->kind == EventKind::Hook && ev->payload.value("fn", "") == "write") {
                const std::string img = ev->payload.value("image", "");
                if (!img.empty() && img != main_name) v.invoked.insert(img);
            }
    }
    for (const auto& x : expected)
        if (!v.loaded.count(x)) v.missing.push_back(x);
    v.status = v.missing.empty() ? Validation::Pass : Validation::Fail;
    if (!v.missing.empty()) v.reason = "not loaded concretely";
    return v;
}

BenchReport run_pipeline(const std::string& binary, const PipelineOptions& opts, const GroundTruth& gt) {
    const std::size_t runs = std::max<std::size_t>(1, opts.timed_runs);
    std::optional<BenchReport> first;
    double total = 0;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Analysis a = analyze(binary, opts, gt.benchmark);
        total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!first) first = std::move(a.report);
    }
    BenchReport r = std::move(*first);
    r.seconds = total / static_cast<double>(runs);

    // Phase 4.
    if (r.discovered.empty()) {
        r.validation = Validation::Skipped;
        return r;
    }
    const Witness w = merge_witness(r.derived_witness, opts.witness);
    const auto names = r.discovered_names();
    r.validation_detail = concrete_validate(binary, w, {names.begin(), names.end()}, opts);
    r.validation = r.validation_detail.status;
    return r;
}

nlohmann::json Growth::to_json() const { return {{"nodes", nodes}, {"edges", edges}, {"functions", functions}}; }

SuiteSummary summarize(std::vector<BenchReport> reports, std::vector<GroundTruth> truths) {
    SuiteSummary s;
    s.reports = std::move(reports);
    s.truths = std::move(truths);
    std::size_t found = 0, hits = 0, expected = 0;
    for (std::size_t i = 0; i < s.reports.size(); ++i) {
        const auto names = s.reports[i].discovered_names();
        const std::set<std::string> d(names.begin(), names.end());
        found += d.size();
        if (i < s.truths.size()) {
            const std::set<std::string> g(s.truths[i].expected_libraries.begin(), s.truths[i].expected_libraries.end());
            expected += g.size();
            for (const auto& n : d) hits += g.count(n);
        }
    }
    s.precision = found ? static_cast<double>(hits) / static_cast<double>(found) : 1.0;
    s.recall = expected ? static_cast<double>(hits) / static_cast<double>(expected) : 1.0;

    auto rel = [](double st, double mo) { return st > 0 ? (mo - st) / st : 0.0; };
    double sn = 0, se = 0, sf = 0, mn = 0, me = 0, mf = 0;
    for (const auto& r : s.reports) {
        s.growth_mean.nodes += rel(static_cast<double>(r.static_metrics.nodes), static_cast<double>(r.module_metrics.nodes));
        s.growth_mean.edges += rel(static_cast<double>(r.static_metrics.edges), static_cast<double>(r.module_metrics.edges));
        s.growth_mean.functions +=
            rel(static_cast<double>(r.static_metrics.functions), static_cast<double>(r.module_metrics.functions));
        sn += static_cast<double>(r.static_metrics.nodes);
        se += static_cast<double>(r.static_metrics.edges);
        sf += static_cast<double>(r.static_metrics.functions);
        mn += static_cast<double>(r.module_metrics.nodes);
        me += static_cast<double>(r.module_metrics.edges);
        mf += static_cast<double>(r.module_metrics.functions);
    }
    if (!s.reports.empty()) {
        const auto n = static_cast<double>(s.reports.size());
        s.growth_mean.nodes /= n;
        s.growth_mean.edges /= n;
        s.growth_mean.functions /= n;
    }
    s.growth_pooled = {rel(sn, mn), rel(se, me), rel(sf, mf)};
    return s;
}

nlohmann::json SuiteSummary::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : reports) rs.push_back(r.to_json());
    return {{"benchmarks", rs},
            {"precision", precision},
            {"recall", recall},
            {"growth_mean", growth_mean.to_json()},
            {"growth_pooled", growth_pooled.to_json()}};
}

namespace {

std::string pct(double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(1) << v * 100.0 << " %";
    return o.str();
}

}  // namespace

std::string render(const SuiteSummary& summary, ReportFormat format) {
    if (format == ReportFormat::Json) return summary.to_json().dump(2) + "\n";
    std::ostringstream o;
    o << "# Reference growth from the published evaluation (not reproduced here): nodes 29.8 %, edges 26.5 %, "
         "functions 41.6 %\n";
    o << "# Intercepted functions: " << HookRegistry::intercepted().size()
      << " named (+ getenv plumbing); the published tool reports 42 hook procedures, 6 of them unnamed\n";
    if (!summary.reports.empty()) {
        o << "# Precision " << std::fixed << std::setprecision(3) << summary.precision << ", recall " << summary.recall
          << "\n";
        o << "# Growth, per-benchmark mean: nodes " << pct(summary.growth_mean.nodes) << ", edges "
          << pct(summary.growth_mean.edges) << ", functions " << pct(summary.growth_mean.functions) << "\n";
        o << "# Growth, pooled totals: nodes " << pct(summary.growth_pooled.nodes) << ", edges "
          << pct(summary.growth_pooled.edges) << ", functions " << pct(summary.growth_pooled.functions) << "\n";
    }
    const std::vector<std::string> head = {"Benchmark", "Steps", "Time s", "Nodes static", "Nodes module",
                                           "Edges static", "Edges module", "Functions static", "Functions module",
                                           "Objects static", "Objects module"};
    std::vector<std::vector<std::string>> rows = {head};
    for (const auto& r : summary.reports) {
        std::ostringstream t;
        t << std::fixed << std::setprecision(2) << r.seconds;
        rows.push_back({r.benchmark, std::to_string(r.steps), t.str(), std::to_string(r.static_metrics.nodes),
                        std::to_string(r.module_metrics.nodes), std::to_string(r.static_metrics.edges),
                        std::to_string(r.module_metrics.edges), std::to_string(r.static_metrics.functions),
                        std::to_string(r.module_metrics.functions), std::to_string(r.static_metrics.loaded_objects),
                        std::to_string(r.module_metrics.loaded_objects)});
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) o << " | ";
            if (i == 0) o << std::left << std::setw(static_cast<int>(width[i])) << row[i];
            else o << std::right << std::setw(static_cast<int>(width[i])) << row[i];
        }
        o << "\n";
    }
    return o.str();
}

SuiteSummary evaluate_suite(const std::string& dir, const PipelineOptions& base, std::size_t jobs) {
    namespace fs = std::filesystem;
    std::vector<fs::path> dirs;
    std::error_code ec;
    for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec))
        if (it->is_directory() && fs::exists(it->path() / "ground_truth.json")) dirs.push_back(it->path());
    if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
    std::sort(dirs.begin(), dirs.end());

    std::vector<GroundTruth> truths;
    for (const auto& d : dirs) truths.push_back(load_ground_truth((d / "ground_truth.json").string()));
    std::vector<std::optional<BenchReport>> slots(dirs.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::string first_error;
    auto worker = [&] {
        for (std::size_t i = next++; i < dirs.size(); i = next++) {
            try {
                PipelineOptions o = base;
                o.search_paths.insert(o.search_paths.begin(), (dirs[i] / "libs").string());
                if (fs::exists(dirs[i] / "witness.json")) o.witness = load_witness((dirs[i] / "witness.json").string());
                slots[i] = run_pipeline((dirs[i] / "main.sbf").string(), o, truths[i]);
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (first_error.empty()) first_error = dirs[i].filename().string() + ": " + ex.what();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, dirs.size()));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (!first_error.empty()) throw std::runtime_error(first_error);
    std::vector<BenchReport> reports;
    for (auto& s : slots) reports.push_back(std::move(*s));
    return summarize(std::move(reports), std::move(truths));
}

std::string strip_seconds(const nlohmann::json& j) {
    std::function<nlohmann::json(const nlohmann::json&)> strip = [&](const nlohmann::json& x) -> nlohmann::json {
        if (x.is_object()) {
            nlohmann::json out = nlohmann::json::object();
            for (auto it = x.begin(); it != x.end(); ++it)
                if (it.key() != "seconds") out[it.key()] = strip(it.value());
            return out;
        }
        if (x.is_array()) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& v : x) out.push_back(strip(v));
            return out;
        }
        return x;
    };
    return strip(j).dump();
}

}  // namespace dyncfg
