#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedtgp/autodiff.hpp"
#include "fedtgp/tensor.hpp"

namespace fedtgp {

// Extractor architecture: affine+relu per hidden width, then affine to feature_dim.
struct ArchSpec {
    std::vector<std::size_t> hidden;
    std::size_t feature_dim = 32;

    void validate() const;
    std::string name() const;
    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// Classifier head: affine+relu per hidden width, then affine to num_classes.
struct ClassifierSpec {
    std::vector<std::size_t> hidden;
    friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

struct ModelGroup {
    std::string name;
    std::vector<ArchSpec> extractors;
    // Empty means a single affine classifier for everyone.
    std::vector<ClassifierSpec> classifiers;
};

// "HtMLP_<X>" (1 <= X <= 8) or "HtMLP_<X>-HtC_4".
ModelGroup make_model_group(const std::string& name, std::size_t feature_dim);

// Client i gets entry i mod X.
std::vector<ArchSpec> assign_architectures(const ModelGroup& group, std::size_t clients);
std::vector<ClassifierSpec> assign_classifiers(const ModelGroup& group, std::size_t clients);

struct Linear {
    Tensor weight;  // in×out
    Tensor bias;    // out

    Var forward(Tape& tape, Var x);
};

class ClientModel {
public:
    // Parameters start at zero; use init_model() for a seeded initialization.
    ClientModel(std::size_t input_dim, ArchSpec arch, ClassifierSpec head, std::size_t num_classes);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t feature_dim() const noexcept { return arch_.feature_dim; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const ArchSpec& arch() const noexcept { return arch_; }

    std::vector<Linear>& extractor() noexcept { return extractor_; }
    std::vector<Linear>& classifier() noexcept { return classifier_; }
    const std::vector<Linear>& extractor() const noexcept { return extractor_; }
    const std::vector<Linear>& classifier() const noexcept { return classifier_; }

    // f_i: [B×D] → [B×K]
    Var forward_features(Tape& tape, Var x);
    // h_i: [B×K] → [B×C]
    Var forward_classifier(Tape& tape, Var z);

    // Untracked convenience forwards.
    Tensor features(const Tensor& x);
    Tensor logits(const Tensor& x);

    std::vector<Tensor*> parameters();
    std::size_t parameter_count() const;

private:
    std::size_t input_dim_;
    ArchSpec arch_;
    std::size_t num_classes_;
    std::vector<Linear> extractor_;
    std::vector<Linear> classifier_;
};

// Kaiming-uniform weights U(±√(6/fan_in)), biases U(±1/√fan_in).
ClientModel init_model(std::size_t input_dim, const ArchSpec& arch, const ClassifierSpec& head,
                       std::size_t num_classes, std::uint64_t seed);

}  // namespace fedtgp
