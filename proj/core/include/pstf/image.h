// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "pstf/vecmath.h"

namespace pstf {

/// Linear-RGB accumulation buffer with a per-pixel sample count.
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(int width, int height) { resize(width, height); }

    void resize(int width, int height) {
        m_width = width;
        m_height = height;
        m_sum.assign(size_t(width) * height, RGB(0.0));
        m_sumSq.assign(size_t(width) * height, RGB(0.0));
        m_count.assign(size_t(width) * height, 0.0);
    }

    int width() const { return m_width; }
    int height() const { return m_height; }
    size_t pixelCount() const { return m_sum.size(); }

    void addSample(int x, int y, const RGB &value) {
        size_t i = size_t(y) * m_width + x;
        m_sum[i] += value;
        m_sumSq[i] += value * value;
        m_count[i] += 1.0;
    }

    RGB mean(size_t i) const { return m_count[i] > 0.0 ? m_sum[i] / m_count[i] : RGB(0.0); }
    RGB mean(int x, int y) const { return mean(size_t(y) * m_width + x); }
    double sampleCount(size_t i) const { return m_count[i]; }

    /// Per-channel variance of the per-pixel mean estimate.
    RGB varianceOfMean(size_t i) const {
        double n = m_count[i];
        if (n < 2.0)
            return RGB(0.0);
        RGB m = mean(i);
        RGB var = (m_sumSq[i] / n - m * m) * (n / (n - 1.0));
        return RGB(std::max(var.r, 0.0), std::max(var.g, 0.0), std::max(var.b, 0.0)) / n;
    }

    std::vector<RGB> means() const {
        std::vector<RGB> out(pixelCount());
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = mean(i);
        return out;
    }

private:
    int m_width = 0, m_height = 0;
    std::vector<RGB> m_sum;
    std::vector<RGB> m_sumSq;
    std::vector<double> m_count;
};

struct Image {
    int width = 0, height = 0;
    std::vector<RGB> pixels; // row-major, top-down

    RGB &at(int x, int y) { return pixels[size_t(y) * width + x]; }
    const RGB &at(int x, int y) const { return pixels[size_t(y) * width + x]; }
};

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// PFM: "PF" header, little-endian float32, bottom-up scanlines.
void writePfm(const std::string &path, const Image &image);
Image readPfm(const std::string &path);

/// Tone-mapped 8-bit PPM (clamp to [0,1], gamma 2.2) for quick inspection.
void writePpm(const std::string &path, const Image &image);

/// RMSE over linear RGB with all channels pooled; throws on dimension mismatch.
double rmse(const Image &a, const Image &b);
Image absDifference(const Image &a, const Image &b);

} // namespace pstf
