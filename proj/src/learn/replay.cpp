#include "psf/learn/replay.hpp"

#include <algorithm>

#include "psf/errors.hpp"

namespace psf {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 20));
}

void ReplayBuffer::push(Transition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch) {
    const std::size_t n = data_.size();
    if (batch == 0 || batch > n) throw ConfigError("batch larger than replay buffer");
    // Floyd's algorithm: uniform subset of size `batch`
    std::vector<std::size_t> out;
    out.reserve(batch);
    for (std::size_t j = n - batch; j < n; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng_);
        if (std::find(out.begin(), out.end(), t) == out.end()) {
            out.push_back(t);
        } else {
            out.push_back(j);
        }
    }
    return out;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch) {
    std::vector<Transition> out;
    for (std::size_t i : sample_indices(batch)) out.push_back(data_[i]);
    return out;
}

}  // namespace psf
