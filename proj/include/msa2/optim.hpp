#pragma once

#include <vector>

#include "msa2/nn.hpp"

namespace msa2 {

struct AdamWOptions {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with decoupled weight decay. Frozen parameters and parameters that
// received no gradient in the step are left untouched.
class AdamW {
public:
    AdamW(ParamList params, AdamWOptions options);

    void step();
    void zero_grad();
    long steps() const { return t_; }
    const ParamList& params() const { return params_; }
    const AdamWOptions& options() const { return options_; }

private:
    ParamList params_;
    AdamWOptions options_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace msa2
