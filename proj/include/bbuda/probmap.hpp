#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bbuda/error.hpp"
#include "bbuda/tensor.hpp"

namespace bbuda {

// Per-pixel class-probability field, C×H×W row-major. This is the only
// payload the teacher boundary carries in either direction.
struct ProbMap {
    size_t classes = 0;
    size_t height = 0;
    size_t width = 0;
    std::vector<float> values;  // classes * height * width

    ProbMap() = default;
    ProbMap(size_t c, size_t h, size_t w) : classes(c), height(h), width(w), values(c * h * w, 0.0f) {}

    size_t pixel_count() const { return height * width; }

    float at(size_t c, size_t h, size_t w) const { return values[(c * height + h) * width + w]; }
    float& at(size_t c, size_t h, size_t w) { return values[(c * height + h) * width + w]; }

    // Checks the distribution invariants: values in [0,1], per-pixel channel
    // sums within `tol` of 1. Wire tolerance is 1e-4, in-process 1e-6.
    void validate(double tol) const {
        if (classes < 2) throw value_error("probmap: need at least 2 classes");
        if (values.size() != classes * height * width)
            throw value_error("probmap: value count does not match dimensions");
        size_t hw = pixel_count();
        for (size_t p = 0; p < hw; ++p) {
            double s = 0.0;
            for (size_t c = 0; c < classes; ++c) {
                float v = values[c * hw + p];
                if (!(v >= 0.0f && v <= 1.0f))
                    throw value_error("probmap: value out of [0,1] at pixel " + std::to_string(p));
                s += v;
            }
            if (std::abs(s - 1.0) > tol)
                throw value_error("probmap: channel sum " + std::to_string(s) + " at pixel " +
                                  std::to_string(p) + " violates tolerance " + std::to_string(tol));
        }
    }

    // From a [1,C,H,W] or [C,H,W] tensor (values copied, graph dropped).
    static ProbMap from_tensor(const Tensor& t) {
        Shape s = t.shape();
        if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
        if (s.size() != 3)
            throw shape_error("probmap: want a [1,C,H,W] or [C,H,W] tensor, got " + shape_str(t.shape()));
        ProbMap pm(s[0], s[1], s[2]);
        pm.values = t.values();
        return pm;
    }

    // Constant [1,C,H,W] tensor (no gradient ever flows through it).
    Tensor to_tensor() const {
        return Tensor::from_data({1, classes, height, width}, values);
    }

    // Per-pixel argmax -> H*W label map. Ties resolve to the lowest class.
    std::vector<uint8_t> argmax() const {
        size_t hw = pixel_count();
        std::vector<uint8_t> out(hw, 0);
        for (size_t p = 0; p < hw; ++p) {
            float best = values[p];
            for (size_t c = 1; c < classes; ++c)
                if (values[c * hw + p] > best) {
                    best = values[c * hw + p];
                    out[p] = static_cast<uint8_t>(c);
                }
        }
        return out;
    }

    // Mean over pixels of the max class probability; the confidence measure
    // used by the entropy-term ablation comparison.
    double mean_confidence() const {
        size_t hw = pixel_count();
        double acc = 0.0;
        for (size_t p = 0; p < hw; ++p) {
            float best = values[p];
            for (size_t c = 1; c < classes; ++c) best = std::max(best, values[c * hw + p]);
            acc += best;
        }
        return hw ? acc / static_cast<double>(hw) : 0.0;
    }
};

}  // namespace bbuda
