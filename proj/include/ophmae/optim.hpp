#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ophmae/autodiff.hpp"

namespace ophmae {

// AdamW with decoupled weight decay. Decay is skipped for parameters whose
// name marks them as normalization gains/offsets or biases, the usual
// exemption set.
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<std::pair<std::string, ad::Var>> params, Options options);

    // applies one update from an accumulated gradient map (keyed by node)
    void step(const std::unordered_map<const ad::Node*, ad::Mat>& grads, double lr);

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    // moment tensors for checkpointing, names prefixed opt/m/ and opt/v/
    std::vector<std::pair<std::string, ad::Mat*>> state_blobs();

private:
    struct Slot {
        std::string name;
        ad::Var param;
        ad::Mat m, v;
        bool decay = true;
    };
    std::vector<Slot> slots_;
    Options options_;
    int64_t t_ = 0;
};

}  // namespace ophmae
