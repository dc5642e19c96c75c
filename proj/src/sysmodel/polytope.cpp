#include "psf/sysmodel/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "psf/errors.hpp"

namespace psf {

namespace {

constexpr double kVertexTol = 1e-9;

void push_unique(std::vector<Vec>& out, const Vec& p) {
    for (const auto& q : out) {
        if ((q - p).lpNorm<Eigen::Infinity>() <= kVertexTol) return;
    }
    out.push_back(p);
}

// Facet-intersection enumeration: every subset of dim rows whose equality
// system is nonsingular yields a candidate; keep the feasible ones.
std::vector<Vec> enumerate_vertices(const Mat& H, const Vec& h) {
    const int n = static_cast<int>(H.cols());
    const int m = static_cast<int>(H.rows());
    std::vector<Vec> out;
    if (m < n) return out;

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Mat Hs(n, n);
    Vec hs(n);
    while (true) {
        for (int r = 0; r < n; ++r) {
            Hs.row(r) = H.row(idx[r]);
            hs(r) = h(idx[r]);
        }
        Eigen::FullPivLU<Mat> lu(Hs);
        if (lu.rank() == n) {
            Vec p = lu.solve(hs);
            if (((H * p - h).array() <= kVertexTol * (1.0 + h.cwiseAbs().array())).all()) {
                push_unique(out, p);
            }
        }
        // next combination
        int i = n - 1;
        while (i >= 0 && idx[i] == m - n + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < n; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

}  // namespace

Polytope::Polytope(Mat H, Vec h) : H_(std::move(H)), h_(std::move(h)) {
    if (H_.rows() != h_.size()) throw ConfigError("polytope: H rows and h size differ");
    if (H_.rows() == 0 || H_.cols() == 0) throw ConfigError("polytope: empty H");
    for (int r = 0; r < H_.rows(); ++r) {
        if (H_.row(r).lpNorm<Eigen::Infinity>() == 0.0) {
            throw ConfigError("polytope: row " + std::to_string(r) + " of H is zero");
        }
    }
}

Polytope Polytope::box(const Vec& lo, const Vec& hi) {
    if (lo.size() != hi.size()) throw ConfigError("box: bound sizes differ");
    const int n = static_cast<int>(lo.size());
    Mat H = Mat::Zero(2 * n, n);
    Vec h(2 * n);
    for (int i = 0; i < n; ++i) {
        if (!(lo(i) <= hi(i))) throw ConfigError("box: lower bound exceeds upper bound");
        H(2 * i, i) = 1.0;
        h(2 * i) = hi(i);
        H(2 * i + 1, i) = -1.0;
        h(2 * i + 1) = -lo(i);
    }
    return Polytope(std::move(H), std::move(h));
}

double Polytope::margin(const Vec& x) const { return (H_ * x - h_).maxCoeff(); }

bool Polytope::contains(const Vec& x, double tol) const { return margin(x) <= tol; }

std::optional<std::pair<Vec, Vec>> Polytope::as_box() const {
    const int n = dim();
    Vec lo = Vec::Constant(n, -std::numeric_limits<double>::infinity());
    Vec hi = Vec::Constant(n, std::numeric_limits<double>::infinity());
    for (int r = 0; r < rows(); ++r) {
        int nz = -1;
        for (int c = 0; c < n; ++c) {
            if (H_(r, c) != 0.0) {
                if (nz >= 0) return std::nullopt;
                nz = c;
            }
        }
        const double a = H_(r, nz);
        const double bound = h_(r) / a;
        if (a > 0) {
            hi(nz) = std::min(hi(nz), bound);
        } else {
            lo(nz) = std::max(lo(nz), bound);
        }
    }
    if (!lo.allFinite() || !hi.allFinite()) return std::nullopt;
    return std::make_pair(lo, hi);
}

std::vector<Vec> Polytope::vertices() const {
    if (auto b = as_box()) {
        const auto& [lo, hi] = *b;
        const int n = dim();
        for (int i = 0; i < n; ++i) {
            if (lo(i) > hi(i) + kVertexTol) throw DomainError("polytope is empty");
        }
        std::vector<Vec> out;
        const long corners = 1L << n;
        for (long mask = 0; mask < corners; ++mask) {
            Vec p(n);
            for (int i = 0; i < n; ++i) p(i) = (mask >> i) & 1 ? hi(i) : lo(i);
            push_unique(out, p);
        }
        return out;
    }
    const int n = dim();
    if (n > 4) throw DomainError("vertex enumeration supports boxes or dim <= 4");

    // Bounded iff the recession cone {y | H y <= 0} is trivial; its
    // intersection with the unit box has a nonzero vertex otherwise.
    Mat Hc(rows() + 2 * n, n);
    Vec hc = Vec::Zero(rows() + 2 * n);
    Hc.topRows(rows()) = H_;
    Hc.bottomRows(2 * n).setZero();
    for (int i = 0; i < n; ++i) {
        Hc(rows() + 2 * i, i) = 1.0;
        Hc(rows() + 2 * i + 1, i) = -1.0;
        hc(rows() + 2 * i) = 1.0;
        hc(rows() + 2 * i + 1) = 1.0;
    }
    for (const auto& y : enumerate_vertices(Hc, hc)) {
        if (y.lpNorm<Eigen::Infinity>() > kVertexTol) throw DomainError("polytope is unbounded");
    }
    auto out = enumerate_vertices(H_, h_);
    if (out.empty()) throw DomainError("polytope is empty");
    return out;
}

std::pair<Vec, Vec> Polytope::bounding_box() const {
    if (auto b = as_box()) return *b;
    const auto verts = vertices();
    Vec lo = verts.front();
    Vec hi = verts.front();
    for (const auto& v : verts) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

Polytope Polytope::scaled(double a) const {
    if (a < 0) throw ConfigError("polytope scale must be nonnegative");
    return Polytope(H_, a * h_);
}

Vec Polytope::center() const {
    auto [lo, hi] = bounding_box();
    return 0.5 * (lo + hi);
}

}  // namespace psf
