// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/image.h"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace pstf {

void writePfm(const std::string &path, const Image &image) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ImageIoError("cannot open '" + path + "' for writing");
    out << "PF\n" << image.width << " " << image.height << "\n-1.0\n";
    // bottom-up scanlines
    std::vector<float> row(size_t(image.width) * 3);
    for (int y = image.height - 1; y >= 0; --y) {
        for (int x = 0; x < image.width; ++x) {
            const RGB &c = image.at(x, y);
            row[size_t(x) * 3 + 0] = float(c.r);
            row[size_t(x) * 3 + 1] = float(c.g);
            row[size_t(x) * 3 + 2] = float(c.b);
        }
        out.write(reinterpret_cast<const char *>(row.data()),
                  std::streamsize(row.size() * sizeof(float)));
    }
    if (!out)
        throw ImageIoError("write failed for '" + path + "'");
}

Image readPfm(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ImageIoError("cannot open '" + path + "' for reading");
    std::string magic;
    in >> magic;
    if (magic != "PF")
        throw ImageIoError("'" + path + "': not a color PFM file (magic '" + magic + "')");
    int width = 0, height = 0;
    double scale = 0.0;
    in >> width >> height >> scale;
    if (!in || width < 1 || height < 1)
        throw ImageIoError("'" + path + "': malformed PFM header");
    if (scale >= 0.0)
        throw ImageIoError("'" + path + "': big-endian PFM is not supported");
    in.get(); // single whitespace after the header

    Image image;
    image.width = width;
    image.height = height;
    image.pixels.resize(size_t(width) * height);
    std::vector<float> row(size_t(width) * 3);
    for (int y = height - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char *>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (!in)
            throw ImageIoError("'" + path + "': truncated PFM data");
        for (int x = 0; x < width; ++x)
            image.at(x, y) = RGB(row[size_t(x) * 3], row[size_t(x) * 3 + 1], row[size_t(x) * 3 + 2]);
    }
    return image;
}

void writePpm(const std::string &path, const Image &image) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ImageIoError("cannot open '" + path + "' for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    auto toByte = [](double v) {
        double mapped = std::pow(clamp(v, 0.0, 1.0), 1.0 / 2.2);
        return static_cast<unsigned char>(clamp(mapped * 255.0 + 0.5, 0.0, 255.0));
    };
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const RGB &c = image.at(x, y);
            unsigned char px[3] = {toByte(c.r), toByte(c.g), toByte(c.b)};
            out.write(reinterpret_cast<const char *>(px), 3);
        }
    }
}

double rmse(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height)
        throw ImageIoError("rmse: image dimensions differ");
    double sum = 0.0;
    size_t n = a.pixels.size() * 3;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        RGB d = a.pixels[i] - b.pixels[i];
        sum += sqr(d.r) + sqr(d.g) + sqr(d.b);
    }
    return n > 0 ? std::sqrt(sum / double(n)) : 0.0;
}

Image absDifference(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height)
        throw ImageIoError("difference: image dimensions differ");
    Image out;
    out.width = a.width;
    out.height = a.height;
    out.pixels.resize(a.pixels.size());
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        RGB d = a.pixels[i] - b.pixels[i];
        out.pixels[i] = RGB(std::abs(d.r), std::abs(d.g), std::abs(d.b));
    }
    return out;
}

} // namespace pstf
