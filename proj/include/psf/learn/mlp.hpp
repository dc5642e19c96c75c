#pragma once

#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "psf/sysmodel/types.hpp"

namespace psf {

/// Fully connected tanh network. Inputs are normalized by a fixed affine map
/// (x - in_center) / in_scale; the output is either linear or squashed into
/// the box [lo, hi] through lo + (hi - lo) (1 + tanh z) / 2.
class Mlp {
public:
    struct Box {
        Vec lo, hi;
    };
    /// Forward activations kept for backpropagation.
    struct Tape {
        std::vector<Mat> a;  // a[0] normalized input, a[i] hidden outputs
        Mat z;               // pre-squash output
    };

    Mlp() = default;
    Mlp(std::vector<int> sizes, std::optional<Box> head = std::nullopt);

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    int num_params() const { return static_cast<int>(params_.size()); }
    const std::vector<int>& sizes() const { return sizes_; }
    const std::optional<Box>& head() const { return head_; }
    const Vec& params() const { return params_; }
    Vec& params() { return params_; }

    void set_input_normalization(Vec center, Vec scale);
    const Vec& input_center() const { return in_center_; }
    const Vec& input_scale() const { return in_scale_; }

    /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases; last layer
    /// scaled by `last_scale`.
    void init(std::mt19937_64& rng, double last_scale = 0.1);

    Vec forward(const Vec& x) const;
    Mat forward_batch(const Mat& X) const;  // one sample per column
    Mat forward_batch(const Mat& X, Tape& tape) const;
    /// Gradient of sum(dY .* Y) with respect to the parameters; the input
    /// gradient (raw, before normalization) is written to dX when given.
    Vec backward(const Tape& tape, const Mat& dY, Mat* dX = nullptr) const;

    /// Binary layout: "PSFMLP01", int32 L, L int32 sizes, int32 squashed,
    /// [lo, hi doubles], in_center, in_scale doubles, int64 P, P doubles.
    void save(std::ostream& out) const;
    static Mlp load(std::istream& in);

private:
    std::vector<int> sizes_;
    std::vector<int> offsets_;  // start of each layer's W (column-major), b follows
    std::optional<Box> head_;
    Vec in_center_, in_scale_;
    Vec params_;
};

}  // namespace psf
