#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "orthofactor/csv.hpp"
#include "orthofactor/errors.hpp"
#include "orthofactor/map_explorer.hpp"
#include "orthofactor/model.hpp"

namespace orthofactor {

enum class Command { simulate, fit, diagnose };
enum class ModelKind { spsl_normal, spsl_normal_groupmoves, spsl_orthonormal, gd_normal, gd_orthonormal };

inline const char* to_string(Command c) {
    switch (c) {
        case Command::simulate: return "simulate";
        case Command::fit: return "fit";
        case Command::diagnose: return "diagnose";
    }
    return "";
}

inline const char* to_string(ModelKind m) {
    switch (m) {
        case ModelKind::spsl_normal: return "spsl_normal";
        case ModelKind::spsl_normal_groupmoves: return "spsl_normal_groupmoves";
        case ModelKind::spsl_orthonormal: return "spsl_orthonormal";
        case ModelKind::gd_normal: return "gd_normal";
        case ModelKind::gd_orthonormal: return "gd_orthonormal";
    }
    return "";
}

inline const char* to_string(Expansion e) {
    switch (e) {
        case Expansion::none: return "none";
        case Expansion::cholesky: return "cholesky";
        case Expansion::scale: return "scale";
    }
    return "";
}

inline bool is_gd(ModelKind m) { return m == ModelKind::gd_normal || m == ModelKind::gd_orthonormal; }

inline FactorMode factor_mode_of(ModelKind m) {
    return m == ModelKind::spsl_orthonormal || m == ModelKind::gd_orthonormal ? FactorMode::orthonormal
                                                                              : FactorMode::normal;
}

/// (j, k) loading index, 0-based internally, 1-based in files.
struct TracedEntry {
    Index j = 0;
    Index k = 0;
    std::string name() const { return "beta_" + std::to_string(j + 1) + "_" + std::to_string(k + 1); }
    bool operator==(const TracedEntry&) const = default;
};

struct RunConfig {
    Command command = Command::simulate;
    std::string data_path;
    std::string covariates_path;
    std::string truth_path;
    std::string output_dir = "out";
    ModelKind model = ModelKind::spsl_orthonormal;
    PriorSpec prior;
    std::optional<double> alpha;  // unset: 1/G
    Index K = 8;
    bool adaptive_K = false;
    Index sweeps = 3000;
    Index burn_in = 500;
    Index thin = 1;
    Index chains = 1;
    std::uint64_t seed = 1;
    bool ladder = true;
    LadderSchedule schedule;
    EmOptions em{500, 1e-4, Expansion::scale, 25};
    std::vector<TracedEntry> traced_entries;  // empty: defaults
    int latitude_steps = 1;
    bool latitude_adapt = true;
    bool random_scan = false;
    SyntheticOptions synthetic;

    PriorSpec resolved_prior(Index G) const {
        PriorSpec p = prior;
        p.alpha = alpha ? *alpha : 1.0 / static_cast<double>(G);
        return p;
    }
};

/// Raised for configuration problems; carries the key and its line (0 when
/// the key came from defaults).
class ConfigError : public ValidationError {
public:
    ConfigError(const std::string& key, int line, const std::string& what)
        : ValidationError("config key '" + key + "'" + (line > 0 ? " (line " + std::to_string(line) + ")" : "") +
                          ": " + what),
          key_(key),
          line_(line) {}
    const std::string& key() const { return key_; }
    int line() const { return line_; }

private:
    std::string key_;
    int line_;
};

namespace detail {

inline int line_at_offset(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

/// Line of the first top-level occurrence of "key": in the document.
inline int line_of_key(const std::string& text, const std::string& key) {
    const std::string quoted = "\"" + key + "\"";
    std::size_t pos = 0;
    while ((pos = text.find(quoted, pos)) != std::string::npos) {
        std::size_t after = pos + quoted.size();
        while (after < text.size() && (text[after] == ' ' || text[after] == '\t' || text[after] == '\r' ||
                                       text[after] == '\n'))
            ++after;
        if (after < text.size() && text[after] == ':') return line_at_offset(text, pos);
        pos = after;
    }
    return 0;
}

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "command",        "data_path",      "covariates_path",         "truth_path",
        "output_dir",     "model",          "lambda0",                 "lambda1",
        "alpha",          "eta",            "epsilon",                 "gd_lambda",
        "gd_lambda0",     "gd_lambda1",     "K",                       "K_init",
        "sweeps",         "burn_in",        "thin",                    "chains",
        "seed",           "ladder",         "ladder_lambda1",          "ladder_lambda0_sequence",
        "ladder_stabilization_tol",         "em_max_iter",             "em_tol",
        "em_expansion",   "traced_entries", "latitude_steps",          "latitude_adapt",
        "random_scan",    "G",              "n",                       "K0",
        "block_len",      "stride",         "noise_scale",             "truth_factor_mode"};
    return keys;
}

class Reader {
public:
    Reader(const nlohmann::json& doc, const std::string& text) : doc_(doc), text_(text) {}

    int line(const std::string& key) const { return line_of_key(text_, key); }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(key, line(key), what);
    }
    bool has(const std::string& key) const { return doc_.contains(key) && !doc_.at(key).is_null(); }
    const nlohmann::json& at(const std::string& key) const { return doc_.at(key); }

    std::string str(const std::string& key, const std::string& def) const {
        if (!has(key)) return def;
        if (!at(key).is_string()) fail(key, "expected a string");
        return at(key).get<std::string>();
    }

    double num(const std::string& key, double def) const {
        if (!has(key)) return def;
        if (!at(key).is_number()) fail(key, "expected a number");
        const double v = at(key).get<double>();
        if (!std::isfinite(v)) fail(key, "expected a finite number");
        return v;
    }

    double positive(const std::string& key, double def) const {
        const double v = num(key, def);
        if (!(v > 0.0)) fail(key, "must be positive");
        return v;
    }

    std::int64_t integer(const std::string& key, std::int64_t def) const {
        if (!has(key)) return def;
        const auto& v = at(key);
        if (v.is_number_integer()) return v.get<std::int64_t>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
        }
        fail(key, "expected an integer");
    }

    Index count(const std::string& key, Index def, Index min) const {
        const auto v = integer(key, def);
        if (v < min) fail(key, "must be at least " + std::to_string(min));
        return static_cast<Index>(v);
    }

    bool boolean(const std::string& key, bool def) const {
        if (!has(key)) return def;
        if (!at(key).is_boolean()) fail(key, "expected true or false");
        return at(key).get<bool>();
    }

private:
    const nlohmann::json& doc_;
    const std::string& text_;
};

}  // namespace detail

inline Command parse_command(const std::string& s) {
    if (s == "simulate") return Command::simulate;
    if (s == "fit") return Command::fit;
    if (s == "diagnose") return Command::diagnose;
    throw ValidationError("unknown command '" + s + "' (expected simulate, fit or diagnose)");
}

inline ModelKind parse_model(const std::string& s) {
    for (ModelKind m : {ModelKind::spsl_normal, ModelKind::spsl_normal_groupmoves, ModelKind::spsl_orthonormal,
                        ModelKind::gd_normal, ModelKind::gd_orthonormal})
        if (s == to_string(m)) return m;
    throw ValidationError("unknown model '" + s + "'");
}

struct ConfigOverrides {
    std::optional<Command> command;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

/// Parses and validates a flat JSON configuration document.
inline RunConfig parse_config_text(const std::string& text, const ConfigOverrides& ov = {}) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const int line = detail::line_at_offset(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ValidationError("config line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!doc.is_object()) throw ValidationError("config line 1: top level must be a JSON object");
    for (const auto& item : doc.items())
        if (!detail::known_keys().count(item.key()))
            throw ConfigError(item.key(), detail::line_of_key(text, item.key()), "unknown key");

    const detail::Reader r(doc, text);
    RunConfig c;

    if (r.has("command")) {
        try {
            c.command = parse_command(r.str("command", ""));
        } catch (const ValidationError& e) {
            r.fail("command", e.what());
        }
        if (ov.command && *ov.command != c.command)
            r.fail("command", std::string("config says '") + to_string(c.command) + "' but the command line says '" +
                                  to_string(*ov.command) + "'");
    } else if (ov.command) {
        c.command = *ov.command;
    } else {
        throw ConfigError("command", 0, "no command given");
    }
    if (ov.command) c.command = *ov.command;

    c.data_path = r.str("data_path", "");
    c.covariates_path = r.str("covariates_path", "");
    c.truth_path = r.str("truth_path", "");
    c.output_dir = r.str("output_dir", c.output_dir);
    if (ov.output_dir) c.output_dir = *ov.output_dir;
    if (c.output_dir.empty()) r.fail("output_dir", "must not be empty");
    if (r.has("model")) {
        try {
            c.model = parse_model(r.str("model", ""));
        } catch (const ValidationError& e) {
            r.fail("model", e.what());
        }
    }

    c.prior.lambda0 = r.positive("lambda0", c.prior.lambda0);
    c.prior.lambda1 = r.positive("lambda1", c.prior.lambda1);
    if (r.has("alpha")) {
        if (r.at("alpha").is_string()) {
            if (r.at("alpha").get<std::string>() != "1/G") r.fail("alpha", "expected a number or \"1/G\"");
        } else {
            c.alpha = r.positive("alpha", 1.0);
        }
    }
    c.prior.eta = r.positive("eta", c.prior.eta);
    c.prior.epsilon = r.positive("epsilon", c.prior.epsilon);
    c.prior.gd_lambda = r.positive("gd_lambda", c.prior.gd_lambda);
    c.prior.gd_lambda0 = r.positive("gd_lambda0", c.prior.gd_lambda0);
    c.prior.gd_lambda1 = r.positive("gd_lambda1", c.prior.gd_lambda1);
    if (!(c.prior.lambda0 > c.prior.lambda1))
        r.fail(r.has("lambda1") ? "lambda1" : "lambda0", "lambda0 must be greater than lambda1");

    if (r.has("K") && r.at("K").is_string()) {
        if (r.at("K").get<std::string>() != "adaptive") r.fail("K", "expected a positive integer or \"adaptive\"");
        c.adaptive_K = true;
        c.K = r.count("K_init", c.K, 1);
    } else {
        c.K = r.count("K", c.K, 1);
        if (r.has("K_init")) r.fail("K_init", "only used with K = \"adaptive\"");
    }
    if (c.adaptive_K && is_gd(c.model)) r.fail("K", "adaptive K is available for the spsl models only");

    c.sweeps = r.count("sweeps", c.sweeps, 1);
    c.burn_in = r.count("burn_in", c.burn_in, 0);
    if (c.burn_in >= c.sweeps) r.fail(r.has("burn_in") ? "burn_in" : "sweeps", "burn_in must be smaller than sweeps");
    c.thin = r.count("thin", c.thin, 1);
    c.chains = r.count("chains", c.chains, 1);
    if (c.chains > 256) r.fail("chains", "at most 256 chains");
    const auto seed = r.integer("seed", static_cast<std::int64_t>(c.seed));
    if (seed < 0) r.fail("seed", "must be non-negative");
    c.seed = ov.seed ? *ov.seed : static_cast<std::uint64_t>(seed);

    c.ladder = r.boolean("ladder", c.ladder);
    c.schedule.lambda1 = r.positive("ladder_lambda1", c.schedule.lambda1);
    if (r.has("ladder_lambda0_sequence")) {
        const auto& seq = r.at("ladder_lambda0_sequence");
        if (!seq.is_array() || seq.empty()) r.fail("ladder_lambda0_sequence", "expected a non-empty array of numbers");
        c.schedule.lambda0_sequence.clear();
        for (const auto& v : seq) {
            if (!v.is_number()) r.fail("ladder_lambda0_sequence", "expected a non-empty array of numbers");
            c.schedule.lambda0_sequence.push_back(v.get<double>());
        }
    }
    c.schedule.stabilization_tol = r.positive("ladder_stabilization_tol", c.schedule.stabilization_tol);
    try {
        c.schedule.validate();
    } catch (const ValidationError& e) {
        r.fail("ladder_lambda0_sequence", e.what());
    }
    c.em.max_iter = static_cast<int>(r.count("em_max_iter", c.em.max_iter, 1));
    c.em.tol = r.positive("em_tol", c.em.tol);
    if (r.has("em_expansion")) {
        const std::string e = r.str("em_expansion", "");
        if (e == "none") c.em.expansion = Expansion::none;
        else if (e == "cholesky") c.em.expansion = Expansion::cholesky;
        else if (e == "scale") c.em.expansion = Expansion::scale;
        else r.fail("em_expansion", "expected none, cholesky or scale");
    }

    if (r.has("traced_entries")) {
        const auto& arr = r.at("traced_entries");
        if (!arr.is_array()) r.fail("traced_entries", "expected an array of [row, column] pairs");
        for (const auto& p : arr) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer() ||
                p[0].get<std::int64_t>() < 1 || p[1].get<std::int64_t>() < 1)
                r.fail("traced_entries", "expected [row, column] pairs of 1-based integers");
            c.traced_entries.push_back({static_cast<Index>(p[0].get<std::int64_t>() - 1),
                                        static_cast<Index>(p[1].get<std::int64_t>() - 1)});
        }
    }
    c.latitude_steps = static_cast<int>(r.count("latitude_steps", c.latitude_steps, 1));
    c.latitude_adapt = r.boolean("latitude_adapt", c.latitude_adapt);
    c.random_scan = r.boolean("random_scan", c.random_scan);

    auto& s = c.synthetic;
    s.G = r.count("G", s.G, 1);
    s.n = r.count("n", s.n, 1);
    s.K0 = r.count("K0", s.K0, 1);
    s.block_len = r.count("block_len", s.block_len, 1);
    s.stride = r.count("stride", s.stride, 0);
    s.noise_scale = r.num("noise_scale", s.noise_scale);
    if (s.noise_scale < 0.0) r.fail("noise_scale", "must be non-negative");
    if (r.has("truth_factor_mode")) {
        const std::string m = r.str("truth_factor_mode", "");
        if (m == "normal") s.factor_mode = FactorMode::normal;
        else if (m == "orthonormal") s.factor_mode = FactorMode::orthonormal;
        else r.fail("truth_factor_mode", "expected normal or orthonormal");
    }
    if (s.stride * (s.K0 - 1) + s.block_len > s.G)
        r.fail(r.has("block_len") ? "block_len" : "G", "block layout stride*(K0-1)+block_len exceeds G");
    if (s.factor_mode == FactorMode::orthonormal && s.K0 > s.n)
        r.fail("truth_factor_mode", "orthonormal truth needs K0 <= n");
    s.seed = c.seed;

    if ((c.command == Command::fit || c.command == Command::diagnose) && c.data_path.empty())
        throw ConfigError("data_path", 0, std::string("required for ") + to_string(c.command));
    return c;
}

inline RunConfig parse_config(const std::filesystem::path& path, const ConfigOverrides& ov = {}) {
    return parse_config_text(read_text_file(path), ov);
}

/// Every setting with its effective value; parse_config_text of the dump
/// reproduces the configuration.
inline nlohmann::ordered_json resolved_config_json(const RunConfig& c, std::optional<Index> G = std::nullopt) {
    nlohmann::ordered_json j;
    j["command"] = to_string(c.command);
    j["data_path"] = c.data_path;
    j["covariates_path"] = c.covariates_path;
    j["truth_path"] = c.truth_path;
    j["output_dir"] = c.output_dir;
    j["model"] = to_string(c.model);
    j["lambda0"] = c.prior.lambda0;
    j["lambda1"] = c.prior.lambda1;
    if (c.alpha) j["alpha"] = *c.alpha;
    else if (G) j["alpha"] = 1.0 / static_cast<double>(*G);
    else j["alpha"] = "1/G";
    j["eta"] = c.prior.eta;
    j["epsilon"] = c.prior.epsilon;
    j["gd_lambda"] = c.prior.gd_lambda;
    j["gd_lambda0"] = c.prior.gd_lambda0;
    j["gd_lambda1"] = c.prior.gd_lambda1;
    if (c.adaptive_K) {
        j["K"] = "adaptive";
        j["K_init"] = c.K;
    } else {
        j["K"] = c.K;
    }
    j["sweeps"] = c.sweeps;
    j["burn_in"] = c.burn_in;
    j["thin"] = c.thin;
    j["chains"] = c.chains;
    j["seed"] = c.seed;
    j["ladder"] = c.ladder;
    j["ladder_lambda1"] = c.schedule.lambda1;
    j["ladder_lambda0_sequence"] = c.schedule.lambda0_sequence;
    j["ladder_stabilization_tol"] = c.schedule.stabilization_tol;
    j["em_max_iter"] = c.em.max_iter;
    j["em_tol"] = c.em.tol;
    j["em_expansion"] = to_string(c.em.expansion);
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : c.traced_entries) arr.push_back({e.j + 1, e.k + 1});
    j["traced_entries"] = arr;
    j["latitude_steps"] = c.latitude_steps;
    j["latitude_adapt"] = c.latitude_adapt;
    j["random_scan"] = c.random_scan;
    j["G"] = c.synthetic.G;
    j["n"] = c.synthetic.n;
    j["K0"] = c.synthetic.K0;
    j["block_len"] = c.synthetic.block_len;
    j["stride"] = c.synthetic.stride;
    j["noise_scale"] = c.synthetic.noise_scale;
    j["truth_factor_mode"] = to_string(c.synthetic.factor_mode);
    return j;
}

}  // namespace orthofactor
