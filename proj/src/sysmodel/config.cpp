#include "psf/sysmodel/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

#include "psf/errors.hpp"
#include "psf/sysmodel/pendulum.hpp"

namespace psf {

Vec SystemSetup::curvature_mu() const {
    if (mu_override) return *mu_override;
    return curvature_bounds(*model, X, U, D, curvature);
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    try {
        return Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

double json_scalar(const Json& j) {
    if (j.is_number()) return j.get<double>();
    if (!j.is_string()) throw ConfigError("expected a number or expression, got " + j.dump());
    std::string s;
    for (char c : j.get<std::string>()) {
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    }
    const std::string orig = j.get<std::string>();
    double sign = 1.0;
    std::size_t pos = 0;
    if (pos < s.size() && (s[pos] == '-' || s[pos] == '+')) {
        if (s[pos] == '-') sign = -1.0;
        ++pos;
    }
    double value = 1.0;
    bool have_term = false;
    auto parse_factor = [&]() -> double {
        if (s.compare(pos, 2, "pi") == 0) {
            pos += 2;
            return std::numbers::pi;
        }
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(s.substr(pos), &used);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse scalar expression '" + orig + "'");
        }
        pos += used;
        return v;
    };
    value = parse_factor();
    have_term = true;
    while (pos < s.size()) {
        const char op = s[pos++];
        const double rhs = parse_factor();
        if (op == '*') {
            value *= rhs;
        } else if (op == '/') {
            value /= rhs;
        } else {
            throw ConfigError("cannot parse scalar expression '" + orig + "'");
        }
    }
    if (!have_term) throw ConfigError("empty scalar expression");
    return sign * value;
}

Vec json_vector(const Json& j) {
    if (!j.is_array()) throw ConfigError("expected an array, got " + j.dump());
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = json_scalar(j[i]);
    return v;
}

Mat json_matrix(const Json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("expected a nonempty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Mat M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Vec row = json_vector(j[static_cast<std::size_t>(r)]);
        if (row.size() != cols) throw ConfigError("ragged matrix in config");
        M.row(r) = row.transpose();
    }
    return M;
}

Polytope json_polytope(const Json& j) {
    if (j.contains("lo") && j.contains("hi")) {
        return Polytope::box(json_vector(j.at("lo")), json_vector(j.at("hi")));
    }
    if (j.contains("H") && j.contains("h")) return Polytope(json_matrix(j.at("H")), json_vector(j.at("h")));
    throw ConfigError("set needs either lo/hi or H/h: " + j.dump());
}

std::shared_ptr<const DisturbedModel> make_model(const Json& m) {
    const std::string name = m.value("name", std::string("pendulum"));
    const double dt = m.contains("dt") ? json_scalar(m.at("dt")) : 0.05;
    if (name == "pendulum") {
        PendulumParams p;
        if (m.contains("gravity")) p.gravity = json_scalar(m.at("gravity"));
        if (m.contains("length")) p.length = json_scalar(m.at("length"));
        if (m.contains("mass")) p.mass = json_scalar(m.at("mass"));
        return std::make_shared<Rk4Model>(std::make_shared<PendulumDynamics>(p), dt);
    }
    if (name == "linear") {
        auto ct = std::make_shared<LinearDynamics>(json_matrix(m.at("A")), json_matrix(m.at("B")),
                                                   json_matrix(m.at("E")), "linear");
        return std::make_shared<Rk4Model>(ct, dt);
    }
    throw ConfigError("unknown model '" + name + "'");
}

SystemSetup make_system(const Json& cfg) {
    SystemSetup s;
    s.model = make_model(cfg.at("model"));
    const Json& sets = cfg.at("sets");
    s.X = json_polytope(sets.at("X"));
    s.U = json_polytope(sets.at("U"));
    s.D = json_polytope(sets.at("D"));
    s.R = json_polytope(sets.at("R"));
    const int n = s.model->nx();
    if (s.X.dim() != n || s.R.dim() != n || s.U.dim() != s.model->nu() || s.D.dim() != s.model->nd()) {
        throw ConfigError("set dimensions do not match the model");
    }
    // each set must be bounded and nonempty
    for (const Polytope* P : {&s.X, &s.U, &s.D, &s.R}) P->vertices();

    if (cfg.contains("curvature")) {
        const Json& c = cfg.at("curvature");
        s.curvature.samples = c.value("samples", s.curvature.samples);
        s.curvature.inflation = c.value("inflation", s.curvature.inflation);
        s.curvature.seed = c.value("seed", s.curvature.seed);
        s.curvature.local_fraction = c.value("local_fraction", s.curvature.local_fraction);
        if (c.contains("mu")) {
            s.mu_override = json_vector(c.at("mu"));
            if (s.mu_override->size() != n) throw ConfigError("curvature.mu has wrong size");
        }
    }
    return s;
}

Json default_pendulum_config() {
    return Json::parse(R"({
      "model": {"name": "pendulum", "dt": 0.05, "gravity": 10.0, "length": 1.0, "mass": 1.0},
      "sets": {
        "X": {"lo": ["-pi/3", -2.0], "hi": ["pi/3", 2.0]},
        "U": {"lo": [-5.0], "hi": [5.0]},
        "D": {"lo": [-0.01, -0.01, -0.001], "hi": [0.01, 0.01, 0.001]},
        "R": {"lo": ["-pi/12", -0.5], "hi": ["pi/12", 0.5]}
      },
      "curvature": {"samples": 100000, "inflation": 1.5, "seed": 7}
    })");
}

}  // namespace psf
