#include "fedtgp/models.hpp"

#include <cmath>
#include <random>

#include "fedtgp/errors.hpp"
#include "fedtgp/rng.hpp"

namespace fedtgp {

void ArchSpec::validate() const {
    if (feature_dim < 2) throw ConfigError("feature_dim: must be >= 2");
    for (auto w : hidden)
        if (w == 0) throw ConfigError("hidden widths must be positive");
}

std::string ArchSpec::name() const {
    std::string s = "mlp[";
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(hidden[i]);
    }
    return s + "]->" + std::to_string(feature_dim);
}

namespace {

const std::vector<std::vector<std::size_t>> kHtMlpWidths = {
    {}, {64}, {128}, {256}, {64, 64}, {128, 64}, {256, 128}, {256, 128, 64},
};

}  // namespace

ModelGroup make_model_group(const std::string& name, std::size_t feature_dim) {
    const std::string prefix = "HtMLP_";
    const std::string htc = "-HtC_4";
    if (name.rfind(prefix, 0) != 0) throw ConfigError("model_group: unknown group '" + name + "'");
    std::string rest = name.substr(prefix.size());
    bool hetero_head = false;
    if (rest.size() > htc.size() && rest.compare(rest.size() - htc.size(), htc.size(), htc) == 0) {
        hetero_head = true;
        rest.resize(rest.size() - htc.size());
    }
    std::size_t x = 0;
    try {
        std::size_t used = 0;
        x = std::stoul(rest, &used);
        if (used != rest.size()) x = 0;
    } catch (const std::exception&) {
        x = 0;
    }
    if (x < 1 || x > kHtMlpWidths.size()) {
        throw ConfigError("model_group: '" + name + "' must be HtMLP_X with 1 <= X <= 8, optionally suffixed -HtC_4");
    }

    ModelGroup g;
    g.name = name;
    for (std::size_t i = 0; i < x; ++i) g.extractors.push_back({kHtMlpWidths[i], feature_dim});
    if (hetero_head) {
        g.classifiers = {ClassifierSpec{}, ClassifierSpec{{feature_dim}},
                         ClassifierSpec{{std::max<std::size_t>(feature_dim / 2, 1)}},
                         ClassifierSpec{{std::max<std::size_t>(feature_dim / 4, 1)}}};
    }
    for (const auto& a : g.extractors) a.validate();
    return g;
}

std::vector<ArchSpec> assign_architectures(const ModelGroup& group, std::size_t clients) {
    if (group.extractors.empty()) throw ConfigError("model group has no architectures");
    std::vector<ArchSpec> out;
    out.reserve(clients);
    for (std::size_t i = 0; i < clients; ++i) out.push_back(group.extractors[i % group.extractors.size()]);
    return out;
}

std::vector<ClassifierSpec> assign_classifiers(const ModelGroup& group, std::size_t clients) {
    std::vector<ClassifierSpec> out(clients);
    if (group.classifiers.empty()) return out;
    for (std::size_t i = 0; i < clients; ++i) out[i] = group.classifiers[i % group.classifiers.size()];
    return out;
}

Var Linear::forward(Tape& tape, Var x) {
    return add_bias(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

namespace {

std::vector<Linear> make_stack(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<Linear> layers;
    std::size_t prev = in;
    auto push = [&](std::size_t width) {
        layers.push_back({Tensor({prev, width}), Tensor({width})});
        prev = width;
    };
    for (auto w : hidden) push(w);
    push(out);
    return layers;
}

Var run_stack(Tape& tape, std::vector<Linear>& layers, Var x) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        x = layers[l].forward(tape, x);
        if (l + 1 < layers.size()) x = relu(x);
    }
    return x;
}

}  // namespace

ClientModel::ClientModel(std::size_t input_dim, ArchSpec arch, ClassifierSpec head, std::size_t num_classes)
    : input_dim_(input_dim), arch_(std::move(arch)), num_classes_(num_classes) {
    arch_.validate();
    if (input_dim_ == 0) throw ConfigError("input_dim: must be positive");
    if (num_classes_ < 2) throw ConfigError("num_classes: must be >= 2");
    extractor_ = make_stack(input_dim_, arch_.hidden, arch_.feature_dim);
    classifier_ = make_stack(arch_.feature_dim, head.hidden, num_classes_);
}

Var ClientModel::forward_features(Tape& tape, Var x) {
    if (x.value().cols() != input_dim_) {
        throw DimensionError("forward_features: input " + x.value().shape_string() + " but model expects width " +
                             std::to_string(input_dim_));
    }
    return run_stack(tape, extractor_, x);
}

Var ClientModel::forward_classifier(Tape& tape, Var z) {
    if (z.value().cols() != arch_.feature_dim) {
        throw DimensionError("forward_classifier: input " + z.value().shape_string() +
                             " but model expects width " + std::to_string(arch_.feature_dim));
    }
    return run_stack(tape, classifier_, z);
}

Tensor ClientModel::features(const Tensor& x) {
    Tape tape(false);
    return forward_features(tape, tape.constant(x)).value();
}

Tensor ClientModel::logits(const Tensor& x) {
    Tape tape(false);
    return forward_classifier(tape, forward_features(tape, tape.constant(x))).value();
}

std::vector<Tensor*> ClientModel::parameters() {
    std::vector<Tensor*> ps;
    for (auto* stack : {&extractor_, &classifier_})
        for (auto& layer : *stack) {
            ps.push_back(&layer.weight);
            ps.push_back(&layer.bias);
        }
    return ps;
}

std::size_t ClientModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* stack : {&extractor_, &classifier_})
        for (const auto& layer : *stack) n += layer.weight.size() + layer.bias.size();
    return n;
}

ClientModel init_model(std::size_t input_dim, const ArchSpec& arch, const ClassifierSpec& head,
                       std::size_t num_classes, std::uint64_t seed) {
    ClientModel m(input_dim, arch, head, num_classes);
    Rng rng = make_rng(seed, "model/init");
    for (auto* stack : {&m.extractor(), &m.classifier()})
        for (auto& layer : *stack) {
            const double fan_in = static_cast<double>(layer.weight.rows());
            std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
            std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
            for (auto& v : layer.weight.values()) v = w(rng);
            for (auto& v : layer.bias.values()) v = b(rng);
        }
    return m;
}

}  // namespace fedtgp
