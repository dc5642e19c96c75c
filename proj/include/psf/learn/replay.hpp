#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "psf/sysmodel/types.hpp"

namespace psf {

struct Transition {
    Vec x, u, d;
    double h = 0.0, l = 0.0;  // margins at x
    Vec x_next;
    double h_next = 0.0, l_next = 0.0;  // margins at x_next
};

/// Fixed-capacity ring buffer; a sampled batch has distinct elements.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::uint64_t seed);

    void push(Transition t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return data_[i]; }

    std::vector<std::size_t> sample_indices(std::size_t batch);
    std::vector<Transition> sample(std::size_t batch);

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Transition> data_;
    std::mt19937_64 rng_;
};

}  // namespace psf
