#pragma once

#include "llmser/rng.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace llmser {

struct BackboneConfig;

// Named views into one flat parameter vector. Keeping everything flat makes
// the optimizer, gradient checks and checkpointing uniform.
struct ParamLayout {
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::size_t size() const { return rows * cols; }
    };

    std::vector<Entry> entries;
    std::size_t total = 0;

    std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);
    const Entry& find(const std::string& name) const;
};

struct ModelParams {
    ParamLayout layout;
    std::vector<double> data;

    std::span<double> view(const std::string& name);
    std::span<const double> view(const std::string& name) const;
};

// Opaque per-sequence activation cache produced by forward and consumed by
// backward.
struct EncodeCache {
    virtual ~EncodeCache() = default;
};

// Sequence encoder over 1-based vocab indices (index 0 is padding and never
// appears in inputs). Produces one representation per position; backward
// accumulates into a gradient vector aligned with the parameter layout.
class Encoder {
public:
    virtual ~Encoder() = default;

    virtual void register_params(ParamLayout& layout) const = 0;
    virtual void init_params(ModelParams& params, SeededRng& rng) const = 0;

    // reps is row-major, items.size() x d. dropout_rng may be null when the
    // configured dropout is zero or training is false.
    virtual std::unique_ptr<EncodeCache> forward(const ModelParams& params,
                                                 std::span<const int> items, bool training,
                                                 SeededRng* dropout_rng,
                                                 std::vector<double>& reps) const = 0;

    virtual void backward(const ModelParams& params, const EncodeCache& cache,
                          std::span<const int> items, const std::vector<double>& d_reps,
                          std::vector<double>& grad) const = 0;
};

std::unique_ptr<Encoder> make_encoder(const BackboneConfig& config);

}  // namespace llmser
