#pragma once

#include "mvflow/coefficients.hpp"
#include "mvflow/families.hpp"
#include "mvflow/grid.hpp"
#include "mvflow/paths.hpp"
#include "mvflow/types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

namespace mvflow {

using json = nlohmann::ordered_json;

struct FamilyConfig {
    /// centered | moment_linear | custom
    std::string name = "centered";
    /// centered: identity | tanh_a
    std::string f = "identity";
    double a = 1.0;
    /// moment_linear matrices (row-major nested arrays); D optional.
    std::vector<std::vector<double>> A, B, C;
    std::vector<std::vector<std::vector<double>>> D;
    /// custom: registry key and numeric parameters.
    std::string key;
    std::map<std::string, double> params;
};

struct GridConfig {
    std::vector<double> lo{-2.0};
    std::vector<double> hi{2.0};
    std::vector<int> points{101};
};

struct ConvergeConfig {
    int levels = 3;
    int base_steps = 250;
    int replicas = 200;
    /// Initial point; empty selects the grid-box centre.
    std::vector<double> x0;
    /// finest | closed_form
    std::string reference = "finest";
};

struct OracleConfig {
    int levels = 3;
    int base_steps = 250;
    int replicas = 200;
    std::vector<double> x0{0.5};
};

struct W2Config {
    int instances = 100;
    int max_atoms = 12;
};

struct ProbeConfig {
    int measures = 5;
    int atoms = 8;
    int points = 21;
};

struct SimConfig {
    FamilyConfig family;
    double s = 0.0;
    double T = 1.0;
    int n_steps = 1000;
    GridConfig grid;
    int replicas = 2000;
    std::uint64_t seed = 1;
    std::vector<double> m_ladder{2.0, 5.0, 10.0, 50.0};
    std::vector<double> n_ladder{10.0, 100.0, 1000.0};
    int output_every = 10;
    std::vector<double> domain_times;
    double v_freeze_m = 10.0;
    std::string output_dir = "out";
    ConvergeConfig converge;
    OracleConfig oracle;
    W2Config w2;
    ProbeConfig probe;

    TimeGrid time_grid() const { return TimeGrid(s, T, n_steps); }
    Vec converge_point() const {
        Vec x(static_cast<int>(grid.lo.size()));
        for (std::size_t a = 0; a < grid.lo.size(); ++a)
            x(static_cast<int>(a)) = converge.x0.empty() ? 0.5 * (grid.lo[a] + grid.hi[a]) : converge.x0[a];
        return x;
    }
    SpatialGrid spatial_grid() const {
        Vec lo(static_cast<int>(grid.lo.size())), hi(static_cast<int>(grid.hi.size()));
        for (std::size_t a = 0; a < grid.lo.size(); ++a) lo(static_cast<int>(a)) = grid.lo[a];
        for (std::size_t a = 0; a < grid.hi.size(); ++a) hi(static_cast<int>(a)) = grid.hi[a];
        return SpatialGrid(lo, hi, grid.points);
    }
};

namespace detail {

class Reader {
public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? std::string("<root>") : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    bool has(const std::string& key) const { return node_.contains(key); }
    const json& at(const std::string& key) const {
        seen_.insert(key);
        return node_.at(key);
    }

    template <class T>
    void get(const std::string& key, T& out) const {
        if (!has(key)) return;
        out = convert<T>(at(key), where(key));
    }

    void reject_unknown() const {
        for (auto it = node_.begin(); it != node_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
    }

    template <class T>
    static T convert(const json& v, const std::string& path) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(path + ": expected a number");
            } else if constexpr (std::is_same_v<T, int>) {
                if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<std::int64_t>() >= 0))
                    throw ConfigError(path + ": expected a non-negative integer");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(path + ": expected a string");
            } else {
                if (!v.is_array() && !v.is_object()) throw ConfigError(path + ": expected an array or object");
            }
            return v.template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }

private:
    const json& node_;
    std::string path_;
    mutable std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
    if (!ok) throw ConfigError(path + ": " + what);
}

inline void require_increasing(const std::vector<double>& v, const std::string& path) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        require(std::isfinite(v[i]) && v[i] > 0.0, path + "[" + std::to_string(i) + "]", "must be positive and finite");
        if (i > 0) require(v[i] > v[i - 1], path + "[" + std::to_string(i) + "]", "thresholds must be strictly increasing");
    }
}

}  // namespace detail

/// Parses and validates a run config; errors carry the offending field path.
inline SimConfig parse_config(const json& root) {
    using detail::Reader;
    using detail::require;
    SimConfig c;
    Reader r(root, "");

    if (r.has("family")) {
        Reader f(r.at("family"), "family");
        f.get("name", c.family.name);
        f.get("f", c.family.f);
        f.get("a", c.family.a);
        f.get("A", c.family.A);
        f.get("B", c.family.B);
        f.get("C", c.family.C);
        f.get("D", c.family.D);
        f.get("key", c.family.key);
        f.get("params", c.family.params);
        f.reject_unknown();
        const std::string& n = c.family.name;
        require(n == "centered" || n == "moment_linear" || n == "custom", "family.name",
                "unknown family '" + n + "' (centered | moment_linear | custom)");
        if (n == "centered")
            require(c.family.f == "identity" || c.family.f == "tanh_a", "family.f", "must be identity or tanh_a");
        if (n == "custom")
            require(families::registry().count(c.family.key) == 1, "family.key", "unknown registry key '" + c.family.key + "'");
        if (n == "moment_linear") require(!c.family.A.empty() && !c.family.C.empty(), "family", "moment_linear needs A and C");
    }
    r.get("s", c.s);
    r.get("T", c.T);
    r.get("n_steps", c.n_steps);
    if (r.has("grid")) {
        Reader g(r.at("grid"), "grid");
        g.get("lo", c.grid.lo);
        g.get("hi", c.grid.hi);
        g.get("points", c.grid.points);
        g.reject_unknown();
    }
    r.get("replicas", c.replicas);
    r.get("seed", c.seed);
    r.get("m_ladder", c.m_ladder);
    r.get("n_ladder", c.n_ladder);
    r.get("output_every", c.output_every);
    r.get("domain_times", c.domain_times);
    r.get("v_freeze_m", c.v_freeze_m);
    r.get("output_dir", c.output_dir);
    if (r.has("converge")) {
        Reader g(r.at("converge"), "converge");
        g.get("levels", c.converge.levels);
        g.get("base_steps", c.converge.base_steps);
        g.get("replicas", c.converge.replicas);
        g.get("x0", c.converge.x0);
        g.get("reference", c.converge.reference);
        g.reject_unknown();
    }
    if (r.has("oracle")) {
        Reader g(r.at("oracle"), "oracle");
        g.get("levels", c.oracle.levels);
        g.get("base_steps", c.oracle.base_steps);
        g.get("replicas", c.oracle.replicas);
        g.get("x0", c.oracle.x0);
        g.reject_unknown();
    }
    if (r.has("w2")) {
        Reader g(r.at("w2"), "w2");
        g.get("instances", c.w2.instances);
        g.get("max_atoms", c.w2.max_atoms);
        g.reject_unknown();
    }
    if (r.has("probe")) {
        Reader g(r.at("probe"), "probe");
        g.get("measures", c.probe.measures);
        g.get("atoms", c.probe.atoms);
        g.get("points", c.probe.points);
        g.reject_unknown();
    }
    r.reject_unknown();

    require(std::isfinite(c.s) && std::isfinite(c.T) && c.T > c.s, "T", "must exceed s");
    require(c.n_steps > 0, "n_steps", "must be positive");
    const std::size_t d = c.grid.lo.size();
    require(d >= 1 && static_cast<int>(d) <= kMaxDim, "grid.lo", "dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    require(c.grid.hi.size() == d, "grid.hi", "must have the same length as grid.lo");
    require(c.grid.points.size() == d, "grid.points", "must have the same length as grid.lo");
    for (std::size_t a = 0; a < d; ++a) {
        const std::string idx = "[" + std::to_string(a) + "]";
        require(c.grid.hi[a] > c.grid.lo[a], "grid.hi" + idx, "box is degenerate");
        require(c.grid.points[a] >= 2, "grid.points" + idx, "must be at least 2");
    }
    require(c.replicas >= 1, "replicas", "must be positive");
    require(c.output_every >= 1, "output_every", "must be positive");
    require(c.v_freeze_m > 0.0, "v_freeze_m", "must be positive");
    detail::require_increasing(c.m_ladder, "m_ladder");
    require(!c.m_ladder.empty(), "m_ladder", "must not be empty");
    detail::require_increasing(c.n_ladder, "n_ladder");
    for (std::size_t i = 0; i < c.domain_times.size(); ++i)
        require(c.domain_times[i] >= c.s && c.domain_times[i] <= c.T, "domain_times[" + std::to_string(i) + "]", "must lie in [s, T]");
    require(c.converge.levels >= 3, "converge.levels", "at least 3 refinement levels required");
    require(c.converge.base_steps >= 1, "converge.base_steps", "must be positive");
    require(c.converge.replicas >= 1, "converge.replicas", "must be positive");
    require(c.converge.reference == "finest" || c.converge.reference == "closed_form", "converge.reference",
            "must be finest or closed_form");
    require(c.converge.x0.empty() || c.converge.x0.size() == d, "converge.x0", "dimension must match the grid");
    require(c.oracle.levels >= 3, "oracle.levels", "at least 3 refinement levels required");
    require(c.oracle.base_steps >= 1, "oracle.base_steps", "must be positive");
    require(c.oracle.replicas >= 1, "oracle.replicas", "must be positive");
    require(c.oracle.x0.size() == 1, "oracle.x0", "the closed-form oracle is one-dimensional");
    require(c.w2.instances >= 1, "w2.instances", "must be positive");
    require(c.w2.max_atoms >= 1 && c.w2.max_atoms <= static_cast<int>(kMaxExactAtoms), "w2.max_atoms", "must be in [1, 12]");
    require(c.probe.measures >= 1, "probe.measures", "must be positive");
    require(c.probe.atoms >= 2, "probe.atoms", "must be at least 2");
    require(c.probe.points >= 1, "probe.points", "must be positive");
    return c;
}

inline SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    json root;
    try {
        root = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(root);
}

/// Fully resolved config, for the manifest.
inline json to_json(const SimConfig& c) {
    json fam = {{"name", c.family.name}};
    if (c.family.name == "centered") {
        fam["f"] = c.family.f;
        fam["a"] = c.family.a;
    } else if (c.family.name == "moment_linear") {
        fam["A"] = c.family.A;
        fam["B"] = c.family.B;
        fam["C"] = c.family.C;
        fam["D"] = c.family.D;
    } else {
        fam["key"] = c.family.key;
        fam["params"] = c.family.params;
    }
    return json{{"family", fam},
                {"s", c.s},
                {"T", c.T},
                {"n_steps", c.n_steps},
                {"grid", {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"points", c.grid.points}}},
                {"replicas", c.replicas},
                {"seed", c.seed},
                {"m_ladder", c.m_ladder},
                {"n_ladder", c.n_ladder},
                {"output_every", c.output_every},
                {"domain_times", c.domain_times},
                {"v_freeze_m", c.v_freeze_m},
                {"output_dir", c.output_dir},
                {"converge",
                 {{"levels", c.converge.levels},
                  {"base_steps", c.converge.base_steps},
                  {"replicas", c.converge.replicas},
                  {"x0", c.converge.x0},
                  {"reference", c.converge.reference}}},
                {"oracle",
                 {{"levels", c.oracle.levels},
                  {"base_steps", c.oracle.base_steps},
                  {"replicas", c.oracle.replicas},
                  {"x0", c.oracle.x0}}},
                {"w2", {{"instances", c.w2.instances}, {"max_atoms", c.w2.max_atoms}}},
                {"probe", {{"measures", c.probe.measures}, {"atoms", c.probe.atoms}, {"points", c.probe.points}}}};
}

namespace detail {

inline Mat to_mat(const std::vector<std::vector<double>>& rows, int d, const std::string& path) {
    if (rows.empty()) return zero_mat(d);
    require(static_cast<int>(rows.size()) == d, path, "expected " + std::to_string(d) + " rows");
    Mat m(d, d);
    for (int i = 0; i < d; ++i) {
        require(static_cast<int>(rows[static_cast<std::size_t>(i)].size()) == d, path + "[" + std::to_string(i) + "]",
                "expected " + std::to_string(d) + " columns");
        for (int j = 0; j < d; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return m;
}

}  // namespace detail

/// Builds the coefficient family named in the config and checks it against the grid dimension.
inline CoefficientSet build_family(const SimConfig& c) {
    const int d = static_cast<int>(c.grid.lo.size());
    CoefficientSet set = [&]() -> CoefficientSet {
        const FamilyConfig& f = c.family;
        if (f.name == "centered")
            return families::centered(f.f == "identity" ? families::CenteredDrift::identity : families::CenteredDrift::tanh_a, f.a);
        if (f.name == "moment_linear") {
            families::MomentLinearParams p;
            p.A = detail::to_mat(f.A, d, "family.A");
            p.B = detail::to_mat(f.B, d, "family.B");
            detail::require(static_cast<int>(f.C.size()) == d, "family.C", "expected " + std::to_string(d) + " rows");
            const std::size_t dn = f.C.front().size();
            p.C = Eigen::MatrixXd(d, static_cast<int>(dn));
            for (int i = 0; i < d; ++i) {
                detail::require(f.C[static_cast<std::size_t>(i)].size() == dn, "family.C[" + std::to_string(i) + "]",
                                "rows must have equal length");
                for (std::size_t k = 0; k < dn; ++k) p.C(i, static_cast<int>(k)) = f.C[static_cast<std::size_t>(i)][k];
            }
            for (std::size_t k = 0; k < f.D.size(); ++k) p.D.push_back(detail::to_mat(f.D[k], d, "family.D[" + std::to_string(k) + "]"));
            return families::moment_linear(p);
        }
        return families::registry().at(f.key)(f.params);
    }();
    detail::require(set.dim_state() == d, "grid", "grid dimension " + std::to_string(d) + " differs from the family's state dimension " +
                                                      std::to_string(set.dim_state()));
    return set;
}

}  // namespace mvflow
