#include "mkv/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mkv/analysis.hpp"
#include "mkv/noise.hpp"
#include "mkv/schemes.hpp"

namespace mkv {

using nlohmann::json;

namespace {

const std::vector<std::string> known_commands{"simulate", "rate", "poc", "verify", "probe"};
const std::vector<std::string> known_suites{"model", "taming", "noise", "taylor", "power", "ito"};

std::string key_path(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

void check_keys(const json& obj, const std::string& prefix, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError("key '" + prefix + "' must be an object");
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError("unknown key '" + key_path(prefix, item.key()) + "'");
        }
    }
}

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

std::uint64_t read_count(const json& v, const std::string& path) {
    const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) throw ConfigError("key '" + path + "' must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

double read_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError("key '" + path + "' must be a number");
    return v.get<double>();
}

bool read_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError("key '" + path + "' must be true or false");
    return v.get<bool>();
}

std::string read_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError("key '" + path + "' must be a string");
    return v.get<std::string>();
}

std::vector<std::size_t> read_counts(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError("key '" + path + "' must be a nonempty array");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(read_count(v[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
}

std::vector<std::string> read_strings(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError("key '" + path + "' must be a nonempty array");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(read_string(v[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
}

template <class F>
void with(const json& obj, const std::string& prefix, const char* key, F&& fn) {
    if (const json* v = find(obj, key)) fn(*v, key_path(prefix, key));
}

Scheme read_scheme(const json& v, const std::string& path) {
    const auto s = read_string(v, path);
    if (s == "milstein") return Scheme::milstein;
    if (s == "euler") return Scheme::euler;
    throw ConfigError("key '" + path + "' must be \"milstein\" or \"euler\"");
}

std::size_t positive(std::uint64_t v, const std::string& path) {
    if (v == 0) throw ConfigError("key '" + path + "' must be >= 1");
    return static_cast<std::size_t>(v);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    run.particles = 100;
    run.runs = 10;
    run.seed = 1;
    run.grid = Grid(1.0, 64);
    run.threads = 1;
    run.initial = {1.0, 0.5};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_keys(j, "", {"command", "model", "scheme", "taming", "horizon", "steps", "particles", "runs", "seed",
                       "threads", "substeps", "initial", "epsilon", "output", "simulate", "rate", "poc", "verify",
                       "probe", "version"});
    ExperimentConfig c;

    const json* cmd = find(j, "command");
    if (!cmd) throw ConfigError("missing required key 'command'");
    c.command = read_string(*cmd, "command");
    if (std::find(known_commands.begin(), known_commands.end(), c.command) == known_commands.end()) {
        throw ConfigError("key 'command': unknown command '" + c.command + "'");
    }

    const json* model = find(j, "model");
    if (!model) throw ConfigError("missing required key 'model.name'");
    check_keys(*model, "model", {"name", "params"});
    const json* name = find(*model, "name");
    if (!name) throw ConfigError("missing required key 'model.name'");
    c.model = read_string(*name, "model.name");
    try {
        c.params = default_params(c.model);
    } catch (const ConfigError&) {
        throw ConfigError("key 'model.name': unknown model '" + c.model + "'");
    }
    if (const json* params = find(*model, "params")) {
        if (!params->is_object()) throw ConfigError("key 'model.params' must be an object");
        for (const auto& item : params->items()) {
            const std::string path = "model.params." + item.key();
            if (!c.params.count(item.key())) throw ConfigError("unknown key '" + path + "'");
            c.params[item.key()] = read_number(item.value(), path);
        }
    }

    with(j, "", "scheme", [&](const json& v, const std::string& p) { c.run.scheme = read_scheme(v, p); });
    with(j, "", "taming", [&](const json& v, const std::string& p) {
        const auto s = read_string(v, p);
        if (s != "on" && s != "off") throw ConfigError("key '" + p + "' must be \"on\" or \"off\"");
        c.run.taming = s == "on" ? Taming::on : Taming::off;
    });
    double horizon = c.run.grid.horizon();
    std::size_t steps = c.run.grid.steps();
    with(j, "", "horizon", [&](const json& v, const std::string& p) {
        horizon = read_number(v, p);
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("key '" + p + "' must be positive");
    });
    with(j, "", "steps", [&](const json& v, const std::string& p) { steps = positive(read_count(v, p), p); });
    c.run.grid = Grid(horizon, steps);
    with(j, "", "particles", [&](const json& v, const std::string& p) { c.run.particles = positive(read_count(v, p), p); });
    with(j, "", "runs", [&](const json& v, const std::string& p) { c.run.runs = positive(read_count(v, p), p); });
    with(j, "", "seed", [&](const json& v, const std::string& p) { c.run.seed = read_count(v, p); });
    with(j, "", "threads", [&](const json& v, const std::string& p) { c.run.threads = positive(read_count(v, p), p); });
    with(j, "", "substeps", [&](const json& v, const std::string& p) { c.run.substeps = positive(read_count(v, p), p); });
    with(j, "", "initial", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"mean", "stddev"});
        with(v, p, "mean", [&](const json& w, const std::string& q) { c.run.initial.mean = read_number(w, q); });
        with(v, p, "stddev", [&](const json& w, const std::string& q) {
            c.run.initial.stddev = read_number(w, q);
            if (!(c.run.initial.stddev >= 0.0)) throw ConfigError("key '" + q + "' must be >= 0");
        });
    });
    with(j, "", "epsilon", [&](const json& v, const std::string& p) { c.epsilon = read_number(v, p); });
    with(j, "", "output", [&](const json& v, const std::string& p) { c.output = read_string(v, p); });

    with(j, "", "simulate", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"store_path"});
        with(v, p, "store_path", [&](const json& w, const std::string& q) { c.store_path = read_bool(w, q); });
    });
    with(j, "", "rate", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"resolutions", "reference", "schemes"});
        with(v, p, "resolutions", [&](const json& w, const std::string& q) { c.resolutions = read_counts(w, q); });
        with(v, p, "reference", [&](const json& w, const std::string& q) { c.rate_reference = positive(read_count(w, q), q); });
        with(v, p, "schemes", [&](const json& w, const std::string& q) {
            if (!w.is_array() || w.empty()) throw ConfigError("key '" + q + "' must be a nonempty array");
            c.schemes.clear();
            for (std::size_t i = 0; i < w.size(); ++i) {
                c.schemes.push_back(read_scheme(w[i], q + "[" + std::to_string(i) + "]"));
            }
        });
    });
    with(j, "", "poc", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"sizes", "reference"});
        with(v, p, "sizes", [&](const json& w, const std::string& q) { c.poc_sizes = read_counts(w, q); });
        with(v, p, "reference", [&](const json& w, const std::string& q) { c.poc_reference = positive(read_count(w, q), q); });
    });
    with(j, "", "verify", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"suites", "samples", "ito_tagged", "ito_halving"});
        with(v, p, "suites", [&](const json& w, const std::string& q) {
            c.suites = read_strings(w, q);
            for (const auto& s : c.suites) {
                if (std::find(known_suites.begin(), known_suites.end(), s) == known_suites.end()) {
                    throw ConfigError("key '" + q + "': unknown suite '" + s + "'");
                }
            }
        });
        with(v, p, "samples", [&](const json& w, const std::string& q) { c.verify_samples = positive(read_count(w, q), q); });
        with(v, p, "ito_tagged", [&](const json& w, const std::string& q) { c.ito_tagged = positive(read_count(w, q), q); });
        with(v, p, "ito_halving", [&](const json& w, const std::string& q) { c.ito_halving = read_bool(w, q); });
    });
    with(j, "", "probe", [&](const json& v, const std::string& p) {
        check_keys(v, p, {"samples", "atoms", "radius", "shells", "resolutions", "monotone_alpha"});
        with(v, p, "samples", [&](const json& w, const std::string& q) { c.probe.samples = positive(read_count(w, q), q); });
        with(v, p, "atoms", [&](const json& w, const std::string& q) { c.probe.atoms = positive(read_count(w, q), q); });
        with(v, p, "radius", [&](const json& w, const std::string& q) {
            c.probe.radius = read_number(w, q);
            if (!(c.probe.radius > 1.0)) throw ConfigError("key '" + q + "' must be > 1");
        });
        with(v, p, "shells", [&](const json& w, const std::string& q) {
            c.probe.shells = static_cast<std::size_t>(read_count(w, q));
            if (c.probe.shells < 2) throw ConfigError("key '" + q + "' must be >= 2");
        });
        with(v, p, "resolutions", [&](const json& w, const std::string& q) { c.probe.resolutions = read_counts(w, q); });
        with(v, p, "monotone_alpha", [&](const json& w, const std::string& q) {
            c.probe.monotone_alpha = read_number(w, q);
            if (!(c.probe.monotone_alpha > 1.0)) throw ConfigError("key '" + q + "' must be > 1");
        });
    });
    c.probe.seed = c.run.seed;
    c.probe.epsilon = c.epsilon;
    return c;
}

json ExperimentConfig::to_json() const {
    json params = json::object();
    for (const auto& [k, v] : this->params) params[k] = v;
    json schemes_json = json::array();
    for (Scheme s : schemes) schemes_json.push_back(std::string(to_string(s)));
    return json{
        {"command", command},
        {"model", {{"name", model}, {"params", params}}},
        {"scheme", std::string(to_string(run.scheme))},
        {"taming", std::string(to_string(run.taming))},
        {"horizon", run.grid.horizon()},
        {"steps", run.grid.steps()},
        {"particles", run.particles},
        {"runs", run.runs},
        {"seed", run.seed},
        {"threads", run.threads},
        {"substeps", run.substeps},
        {"initial", {{"mean", run.initial.mean}, {"stddev", run.initial.stddev}}},
        {"epsilon", epsilon},
        {"output", output},
        {"simulate", {{"store_path", store_path}}},
        {"rate", {{"resolutions", resolutions}, {"reference", rate_reference}, {"schemes", schemes_json}}},
        {"poc", {{"sizes", poc_sizes}, {"reference", poc_reference}}},
        {"verify",
         {{"suites", suites}, {"samples", verify_samples}, {"ito_tagged", ito_tagged}, {"ito_halving", ito_halving}}},
        {"probe",
         {{"samples", probe.samples},
          {"atoms", probe.atoms},
          {"radius", probe.radius},
          {"shells", probe.shells},
          {"resolutions", probe.resolutions},
          {"monotone_alpha", probe.monotone_alpha}}},
    };
}

void apply_override(json& j, const std::string& path, const std::string& value) {
    if (path.empty()) throw ConfigError("empty override key");
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("malformed override key '" + path + "'");
        if (!node->is_object()) {
            if (!node->is_null()) throw ConfigError("override '" + path + "' descends into a non-object");
            *node = json::object();
        }
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(parsed);
}

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

//---------------------------------------------------------------------------//
// Output helpers
//---------------------------------------------------------------------------//

class Csv {
  public:
    Csv(const std::filesystem::path& path, std::initializer_list<std::string_view> columns) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        out_ << csv_schema_line << '\n';
        bool first = true;
        for (auto c : columns) {
            out_ << (first ? "" : ",") << c;
            first = false;
        }
        out_ << '\n';
    }

    template <class... Ts>
    void row(const Ts&... fields) {
        bool first = true;
        ((out_ << (first ? "" : ",") << field(fields), first = false), ...);
        out_ << '\n';
    }

  private:
    static std::string field(double v) { return format_number(v); }
    static std::string field(std::size_t v) { return std::to_string(v); }
    static std::string field(int v) { return std::to_string(v); }
    static std::string field(const std::string& s) { return s; }
    static std::string field(const char* s) { return s; }

    std::ofstream out_;
};

struct Outcome {
    std::ostringstream summary;
    bool failed = false;
};

std::string join_numbers(std::span<const double> v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_number(v[i]);
    return s;
}

//---------------------------------------------------------------------------//
// Commands
//---------------------------------------------------------------------------//

void run_simulate(const ExperimentConfig& c, const Model& model, const std::filesystem::path& dir, Outcome& o) {
    const auto& cfg = c.run;
    const std::size_t n = cfg.grid.steps();
    const std::size_t d = model.state_dim();
    std::vector<Trajectory> trajs(cfg.runs);
    std::vector<std::vector<double>> initial(cfg.runs);
    RunConfig serial = cfg;
    serial.threads = 1;
    parallel_for(cfg.runs, cfg.threads, [&](std::size_t r) {
        const auto real = NoiseRealization::sample(serial, model.marks(), model.noise_dim(), n, r);
        initial[r] = sample_initial_state(cfg.initial, cfg.seed, r, cfg.particles, d);
        trajs[r] = simulate(model, serial, n, real, initial[r], c.store_path);
    });

    Csv traj(dir / "trajectory.csv", {"t", "run", "particle", "component", "value"});
    Csv diag(dir / "diagnostics.csv", {"run", "step", "t", "max_abs", "taming_fraction", "jumps"});
    std::size_t blown = 0;
    double s1 = 0.0, s2 = 0.0;
    std::size_t live = 0;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
        const auto& tr = trajs[r];
        auto emit = [&](std::size_t k, std::span<const double> state) {
            for (std::size_t i = 0; i < cfg.particles; ++i) {
                for (std::size_t u = 0; u < d; ++u) traj.row(tr.times[k], r, i, u, state[i * d + u]);
            }
        };
        if (c.store_path) {
            const std::size_t block = cfg.particles * d;
            for (std::size_t k = 0; k <= n; ++k) emit(k, std::span<const double>(tr.path).subspan(k * block, block));
        } else {
            emit(0, initial[r]);
            emit(n, tr.final_state);
        }
        for (std::size_t k = 0; k < tr.diagnostics.size(); ++k) {
            const auto& dg = tr.diagnostics[k];
            diag.row(r, k, tr.times[k + 1], dg.max_abs, dg.taming_fraction, dg.jumps);
        }
        blown += tr.blown_up_count();
        for (std::size_t i = 0; i < cfg.particles; ++i) {
            if (tr.blown_up[i]) continue;
            const double x = tr.final_state[i * d];
            s1 += x;
            s2 += x * x;
            ++live;
        }
    }
    const double total = static_cast<double>(cfg.runs * cfg.particles);
    const double fraction = static_cast<double>(blown) / total;
    o.summary << "blown-up paths: " << blown << " of " << cfg.runs * cfg.particles << " ("
              << format_number(fraction) << ")\n";
    if (live > 0) {
        o.summary << "mean of component 0 at T: " << format_number(s1 / static_cast<double>(live)) << '\n';
        o.summary << "second moment of component 0 at T: " << format_number(s2 / static_cast<double>(live)) << '\n';
    }
    if (fraction > 0.01) {
        o.failed = true;
        o.summary << "FAILED: blow-up fraction above 1%\n";
    }
}

void run_rate(const ExperimentConfig& c, const Model& model, const std::filesystem::path& dir, Outcome& o) {
    const auto results = rate_experiment(model, c.run, c.schemes, c.resolutions, c.rate_reference);
    o.summary << "reference resolution: " << c.rate_reference << '\n';
    o.summary << "epsilon (rate target label): " << format_number(c.epsilon) << '\n';
    for (const auto& ex : results) {
        const std::string name(to_string(ex.scheme));
        Csv csv(dir / ("rate_" + name + ".csv"), {"n", "mse", "ci_lo", "ci_hi", "rms_rate_running"});
        for (std::size_t k = 0; k < ex.rows.size(); ++k) {
            const auto& row = ex.rows[k];
            csv.row(row.n, row.mse, row.ci_lo, row.ci_hi, ex.running_rate[k]);
        }
        o.summary << name << ": fitted rms rate " << format_number(ex.fit.rms_rate) << " +- "
                  << format_number(ex.fit.rms_rate_stderr) << " (mse slope " << format_number(ex.fit.slope)
                  << "), excluded " << ex.excluded << " of " << ex.total << " particle paths\n";
        if (ex.failed) {
            o.failed = true;
            o.summary << name << " FAILED: " << ex.failure << '\n';
        }
    }
}

void run_poc(const ExperimentConfig& c, const Model& model, const std::filesystem::path& dir, Outcome& o) {
    const auto ex = poc_experiment(model, c.run, c.poc_sizes, c.poc_reference, c.run.grid.steps());
    Csv csv(dir / "poc.csv", {"N", "discrepancy", "ci_lo", "ci_hi"});
    for (const auto& row : ex.rows) csv.row(row.particles, row.discrepancy, row.ci_lo, row.ci_hi);
    o.summary << "reference N: " << ex.reference << ", steps: " << ex.steps << '\n';
    o.summary << "fitted N-slope of the mean-square discrepancy: " << format_number(ex.fit.slope) << " +- "
              << format_number(ex.fit.slope_stderr) << '\n';
    o.summary << "informational target -0.5 +- 0.3; the exact propagation-of-chaos constant is not reproducible "
                 "at this scale\n";
    o.summary << "strictly decreasing: " << (ex.decreasing ? "yes" : "no")
              << ", endpoint CIs separated: " << (ex.endpoints_separated ? "yes" : "no") << '\n';
    if (ex.failed) {
        o.failed = true;
        o.summary << "FAILED: " << ex.failure << '\n';
    }
}

void run_verify(const ExperimentConfig& c, const Model& model, const std::filesystem::path& dir, Outcome& o) {
    Csv csv(dir / "verify.csv", {"suite", "check", "value", "threshold", "passed"});
    const std::uint64_t seed = c.run.seed;
    const std::size_t samples = c.verify_samples;
    auto record = [&](const std::string& suite, const std::string& check, double value, double threshold,
                      bool ok) {
        csv.row(suite, check, value, threshold, ok ? 1 : 0);
        if (!ok) {
            o.failed = true;
            o.summary << "FAILED " << suite << ": " << check << " = " << format_number(value) << '\n';
        }
    };
    for (const auto& suite : c.suites) {
        if (suite == "model") {
            const std::size_t d = model.state_dim();
            Rng rng(stream_seed(seed, 0, 0, Stream::initial, 101));
            std::vector<ProbePoint> probes(16);
            for (auto& p : probes) {
                p.x.resize(d);
                p.atoms.resize(8 * d);
                for (double& e : p.x) e = rng.normal();
                for (double& e : p.atoms) e = rng.normal();
            }
            const auto rep = validate_model(model, probes);
            record(suite, "finite", rep.fatal ? 1.0 : 0.0, 0.0, !rep.fatal);
            for (const auto& e : rep.entries) record(suite, e.quantity, e.max_discrepancy, rep.tolerance, !e.flagged);
        } else if (suite == "taming") {
            for (std::size_t n : {1u, 4u, 64u, 4096u}) {
                const auto rep = check_taming_bounds(model, n, samples, seed);
                for (const auto& f : rep.families) {
                    record(suite, f.name + "@n=" + std::to_string(n), static_cast<double>(f.violations), 0.0,
                           f.violations == 0);
                }
            }
        } else if (suite == "noise") {
            const auto rep = noise_coupling_check(samples, seed);
            record(suite, "increment_mismatches", static_cast<double>(rep.increment_mismatches), 0.0,
                   rep.increment_mismatches == 0);
            for (const auto& m : rep.covariance) {
                const double z = m.se > 0.0 ? std::abs(m.estimate - m.target) / m.se : 0.0;
                record(suite, m.name + " z-score", z, 3.0, m.within(3.0));
            }
            record(suite, "diagonal_identity_error", rep.diagonal_max_error, 0.0, rep.diagonal_max_error == 0.0);
            record(suite, "symmetry_error", rep.symmetry_max_error, 1e-14, rep.symmetry_max_error < 1e-14);
        } else if (suite == "taylor") {
            for (std::size_t atoms : {2u, 5u, 50u}) {
                const auto rep = measure_taylor_fuzz(atoms, 1, samples, 4, seed);
                record(suite, "max_residual@N=" + std::to_string(atoms), rep.max_residual, 1e-10,
                       rep.max_residual < 1e-10);
            }
        } else if (suite == "power") {
            const auto rep = pth_power_inequality_check(samples, seed);
            record(suite, "violations", static_cast<double>(rep.violations), 0.0, rep.violations == 0);
        } else if (suite == "ito") {
            const auto v = ito_verify(model, ItoFunction::quadratic_mean(), c.run, c.run.grid.steps(), c.ito_tagged,
                                      c.ito_halving);
            const auto& e = v.coarse;
            record(suite, "|direct-formula|/se", e.se > 0.0 ? std::abs(e.difference) / e.se : 0.0, 3.0,
                   v.within_three_se());
            if (c.ito_halving) {
                record(suite, "halving_gap/se", std::abs(v.halving_gap) / v.halving_gap_se, 3.0, v.halves());
            }
        }
        o.summary << "suite " << suite << " done\n";
    }
    o.summary << (o.failed ? "verify: FAILED\n" : "verify: all suites passed\n");
}

void run_probe(const ExperimentConfig& c, const Model& model, const std::filesystem::path& dir, Outcome& o) {
    const auto rep = probe_assumptions(model, c.probe);
    Csv csv(dir / "probe.csv", {"assumption", "n", "max_ratio", "argmax_x"});
    for (const auto& row : rep.rows) csv.row(row.assumption, row.n, row.max_ratio, join_numbers(row.argmax_x));
    o.summary << "non-finite evaluations: " << rep.nonfinite << '\n';
    if (rep.flagged.empty()) {
        o.summary << "no probe flagged\n";
    } else {
        for (const auto& f : rep.flagged) o.summary << "flagged: " << f << '\n';
    }
    if (!rep.passed()) o.failed = true;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tamed Milstein-type scheme for interacting particle systems with jumps", "mkv_milstein"};
    std::string config_path, out_dir, command;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::vector<std::string> sets;
    auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides the config)");
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--config", config_path, "JSON configuration or manifest");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--set", sets, "Override a config key: key.path=value")->allow_extra_args(false);
    app.add_option("command", command, "simulate | rate | poc | verify | probe (overrides the config)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    }

    json j = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            err << "usage error: cannot read config file '" << config_path << "'\n";
            return 1;
        }
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) {
            err << "usage error: config file '" << config_path << "' is not valid JSON\n";
            return 1;
        }
    }

    ExperimentConfig cfg;
    try {
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not of the form key=value");
            apply_override(j, s.substr(0, eq), s.substr(eq + 1));
        }
        if (!command.empty()) j["command"] = command;
        if (seed_opt->count()) j["seed"] = seed;
        if (threads_opt->count()) j["threads"] = threads;
        if (!out_dir.empty()) j["output"] = out_dir;
        cfg = ExperimentConfig::from_json(j);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    }
    if (cfg.output.empty()) {
        const char* env = std::getenv("MKV_OUT_DIR");
        cfg.output = env && *env ? env : "mkv_out";
    }

    std::unique_ptr<Model> model;
    try {
        model = make_model(cfg.model, cfg.params);
    } catch (const std::exception& e) {
        err << "usage error: key 'model.params': " << e.what() << '\n';
        return 1;
    }

    const std::filesystem::path dir(cfg.output);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        err << "usage error: cannot create output directory '" << cfg.output << "': " << ec.message() << '\n';
        return 1;
    }
    {
        json manifest = cfg.to_json();
        manifest["version"] = {{"code", code_version}, {"schema", csv_schema_line}};
        std::ofstream m(dir / "manifest.json");
        if (!m) {
            err << "usage error: cannot write to output directory '" << cfg.output << "'\n";
            return 1;
        }
        m << manifest.dump(2) << '\n';
    }

    Outcome outcome;
    outcome.summary << "command: " << cfg.command << "\nmodel: " << cfg.model
                    << "\nscheme: " << to_string(cfg.run.scheme) << ", taming: " << to_string(cfg.run.taming)
                    << "\nparticles: " << cfg.run.particles << ", runs: " << cfg.run.runs
                    << ", steps: " << cfg.run.grid.steps() << ", seed: " << cfg.run.seed << '\n';
    try {
        if (cfg.command == "simulate") run_simulate(cfg, *model, dir, outcome);
        else if (cfg.command == "rate") run_rate(cfg, *model, dir, outcome);
        else if (cfg.command == "poc") run_poc(cfg, *model, dir, outcome);
        else if (cfg.command == "verify") run_verify(cfg, *model, dir, outcome);
        else run_probe(cfg, *model, dir, outcome);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "experiment error: " << e.what() << '\n';
        outcome.summary << "FAILED: " << e.what() << '\n';
        outcome.failed = true;
    }

    std::ofstream(dir / "summary.txt") << outcome.summary.str();
    out << outcome.summary.str();
    return outcome.failed ? 2 : 0;
}

}  // namespace mkv
