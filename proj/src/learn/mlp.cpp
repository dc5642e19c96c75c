#include "psf/learn/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "psf/errors.hpp"

namespace psf {

Mlp::Mlp(std::vector<int> sizes, std::optional<Box> head) : sizes_(std::move(sizes)), head_(std::move(head)) {
    if (sizes_.size() < 2) throw ConfigError("network needs at least an input and an output layer");
    for (int s : sizes_)
        if (s < 1) throw ConfigError("layer sizes must be positive");
    if (head_) {
        if (head_->lo.size() != output_dim() || head_->hi.size() != output_dim())
            throw ConfigError("output box has wrong dimension");
        if (((head_->hi - head_->lo).array() < 0).any()) throw ConfigError("output box is empty");
    }
    int p = 0;
    for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
        offsets_.push_back(p);
        p += sizes_[i + 1] * sizes_[i] + sizes_[i + 1];
    }
    params_ = Vec::Zero(p);
    in_center_ = Vec::Zero(input_dim());
    in_scale_ = Vec::Ones(input_dim());
}

void Mlp::set_input_normalization(Vec center, Vec scale) {
    if (center.size() != input_dim() || scale.size() != input_dim()) throw ConfigError("normalization size mismatch");
    if ((scale.array() <= 0).any()) throw ConfigError("normalization scale must be positive");
    in_center_ = std::move(center);
    in_scale_ = std::move(scale);
}

void Mlp::init(std::mt19937_64& rng, double last_scale) {
    const int layers = static_cast<int>(offsets_.size());
    for (int i = 0; i < layers; ++i) {
        const int in = sizes_[i], out = sizes_[i + 1];
        const double r = std::sqrt(6.0 / (in + out)) * (i + 1 == layers ? last_scale : 1.0);
        std::uniform_real_distribution<double> u(-r, r);
        for (int k = 0; k < out * in; ++k) params_(offsets_[i] + k) = u(rng);
        params_.segment(offsets_[i] + out * in, out).setZero();
    }
}

Vec Mlp::forward(const Vec& x) const {
    Mat X = x;
    return forward_batch(X).col(0);
}

Mat Mlp::forward_batch(const Mat& X) const {
    Tape t;
    return forward_batch(X, t);
}

Mat Mlp::forward_batch(const Mat& X, Tape& tape) const {
    if (X.rows() != input_dim()) throw ConfigError("network input has wrong dimension");
    const int layers = static_cast<int>(offsets_.size());
    tape.a.resize(layers);
    tape.a[0] = (X.colwise() - in_center_).array().colwise() / in_scale_.array();
    for (int i = 0; i < layers; ++i) {
        const int in = sizes_[i], out = sizes_[i + 1];
        Eigen::Map<const Mat> W(params_.data() + offsets_[i], out, in);
        Eigen::Map<const Vec> b(params_.data() + offsets_[i] + out * in, out);
        Mat z = W * tape.a[i];
        z.colwise() += b;
        if (i + 1 < layers) {
            tape.a[i + 1] = z.array().tanh();
        } else {
            tape.z = std::move(z);
        }
    }
    if (!head_) return tape.z;
    const Vec half = 0.5 * (head_->hi - head_->lo);
    Mat y = (tape.z.array().tanh() + 1.0).matrix();
    y = half.asDiagonal() * y;
    y.colwise() += head_->lo;
    return y;
}

Vec Mlp::backward(const Tape& tape, const Mat& dY, Mat* dX) const {
    const int layers = static_cast<int>(offsets_.size());
    Vec grad = Vec::Zero(num_params());
    Mat delta = dY;
    if (head_) {
        const Vec half = 0.5 * (head_->hi - head_->lo);
        const Mat th = tape.z.array().tanh();
        delta = (half.asDiagonal() * dY).cwiseProduct((1.0 - th.array().square()).matrix());
    }
    for (int i = layers - 1; i >= 0; --i) {
        const int in = sizes_[i], out = sizes_[i + 1];
        Eigen::Map<const Mat> W(params_.data() + offsets_[i], out, in);
        Eigen::Map<Mat> gW(grad.data() + offsets_[i], out, in);
        gW.noalias() = delta * tape.a[i].transpose();
        grad.segment(offsets_[i] + out * in, out) = delta.rowwise().sum();
        if (i > 0) {
            delta = (W.transpose() * delta).cwiseProduct((1.0 - tape.a[i].array().square()).matrix());
        } else if (dX) {
            *dX = (W.transpose() * delta).array().colwise() / in_scale_.array();
        }
    }
    return grad;
}

namespace {

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("truncated network file");
    return v;
}

void put_vec(std::ostream& out, const Vec& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vec get_vec(std::istream& in, Eigen::Index n) {
    Vec v(n);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw ParseError("truncated network file");
    return v;
}

}  // namespace

void Mlp::save(std::ostream& out) const {
    out.write("PSFMLP01", 8);
    put<std::int32_t>(out, static_cast<std::int32_t>(sizes_.size()));
    for (int s : sizes_) put<std::int32_t>(out, s);
    put<std::int32_t>(out, head_ ? 1 : 0);
    if (head_) {
        put_vec(out, head_->lo);
        put_vec(out, head_->hi);
    }
    put_vec(out, in_center_);
    put_vec(out, in_scale_);
    put<std::int64_t>(out, params_.size());
    put_vec(out, params_);
}

Mlp Mlp::load(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "PSFMLP01", 8) != 0) throw ParseError("not a network file");
    const int L = get<std::int32_t>(in);
    if (L < 2 || L > 64) throw ParseError("bad layer count");
    std::vector<int> sizes(L);
    for (int& s : sizes) {
        s = get<std::int32_t>(in);
        if (s < 1 || s > 1 << 20) throw ParseError("bad layer size");
    }
    std::optional<Box> head;
    if (get<std::int32_t>(in)) {
        Box b;
        b.lo = get_vec(in, sizes.back());
        b.hi = get_vec(in, sizes.back());
        head = b;
    }
    Mlp net(sizes, head);
    Vec c = get_vec(in, sizes.front());
    Vec s = get_vec(in, sizes.front());
    net.set_input_normalization(c, s);
    if (get<std::int64_t>(in) != net.num_params()) throw ParseError("parameter count does not match architecture");
    net.params_ = get_vec(in, net.num_params());
    return net;
}

}  // namespace psf
