#include "ophmae/optim.hpp"

#include <cmath>

namespace ophmae {

namespace {

bool decays(const std::string& name) {
    auto ends_with = [&name](const char* suffix) {
        const std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with("/g") || ends_with("/b")) return false;  // norm gains/offsets
    if (ends_with("bq") || ends_with("bk") || ends_with("bv") || ends_with("bo") ||
        ends_with("b1") || ends_with("b2") || ends_with("bias"))
        return false;
    return true;
}

}  // namespace

AdamW::AdamW(std::vector<std::pair<std::string, ad::Var>> params, Options options)
    : options_(options) {
    slots_.reserve(params.size());
    for (auto& [name, var] : params) {
        Slot s;
        s.name = name;
        s.param = var;
        s.m = ad::Mat::Zero(var->rows(), var->cols());
        s.v = ad::Mat::Zero(var->rows(), var->cols());
        s.decay = decays(name);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(const std::unordered_map<const ad::Node*, ad::Mat>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        const auto it = grads.find(s.param.get());
        const ad::Mat g = it == grads.end() ? ad::Mat::Zero(s.param->rows(), s.param->cols())
                                            : it->second;
        s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * g;
        s.v = options_.beta2 * s.v.array().matrix() +
              (1.0 - options_.beta2) * g.array().square().matrix();
        const ad::Mat m_hat = s.m / bc1;
        const ad::Mat v_hat = s.v / bc2;
        ad::Mat update =
            (m_hat.array() / (v_hat.array().sqrt() + options_.eps)).matrix() * lr;
        if (s.decay && options_.weight_decay > 0.0)
            update += lr * options_.weight_decay * s.param->value;
        s.param->value -= update;
    }
}

std::vector<std::pair<std::string, ad::Mat*>> AdamW::state_blobs() {
    std::vector<std::pair<std::string, ad::Mat*>> blobs;
    for (auto& s : slots_) {
        blobs.emplace_back("opt/m/" + s.name, &s.m);
        blobs.emplace_back("opt/v/" + s.name, &s.v);
    }
    return blobs;
}

}  // namespace ophmae
