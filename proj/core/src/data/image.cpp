#include "bt/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bt/error.hpp"

namespace bt::data {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
}

Image load_png(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw FormatError(path.string() + ": " + img.message);
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image out;
    out.width = img.width;
    out.height = img.height;
    out.channels = gray ? 1 : 3;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw FormatError(path.string() + ": " + img.message);
    }
    return out;
}

std::uint32_t le32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

Image load_bmp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw FormatError(path.string() + ": bad BMP magic");
    const std::uint32_t offset = le32(&b[10]);
    const auto width = static_cast<std::int32_t>(le32(&b[18]));
    const auto height = static_cast<std::int32_t>(le32(&b[22]));
    const std::uint16_t bpp = static_cast<std::uint16_t>(b[28] | (b[29] << 8));
    const std::uint32_t compression = le32(&b[30]);
    if ((bpp != 24 && bpp != 32) || (compression != 0 && compression != 3) || width <= 0 || height == 0)
        throw FormatError(path.string() + ": only uncompressed 24/32-bit BMP is supported");
    const bool bottom_up = height > 0;
    const std::size_t w = static_cast<std::size_t>(width);
    const std::size_t h = static_cast<std::size_t>(bottom_up ? height : -height);
    const std::size_t bytes_pp = bpp / 8;
    const std::size_t stride = (w * bytes_pp + 3) & ~std::size_t{3};
    if (b.size() < offset + stride * h) throw FormatError(path.string() + ": truncated BMP");
    Image out{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t src_row = bottom_up ? h - 1 - y : y;
        const std::uint8_t* row = b.data() + offset + src_row * stride;
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint8_t* px = row + x * bytes_pp;
            std::uint8_t* dst = out.pixels.data() + (y * w + x) * 3;
            dst[0] = px[2];
            dst[1] = px[1];
            dst[2] = px[0];
        }
    }
    return out;
}

double cubic(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<std::size_t> index;  // out * width
    std::vector<double> weight;
    std::size_t width = 0;
};

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (m == 1) return 0;
    const std::ptrdiff_t period = 2 * m;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < m ? i : period - 1 - i);
}

Taps make_taps(std::size_t in, std::size_t out, bool antialias) {
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const double kscale = (antialias && scale < 1.0) ? scale : 1.0;
    const double support = 2.0 / kscale;
    Taps t;
    t.width = static_cast<std::size_t>(std::ceil(2.0 * support)) + 2;
    t.index.resize(out * t.width);
    t.weight.resize(out * t.width);
    for (std::size_t o = 0; o < out; ++o) {
        const double u = (static_cast<double>(o) + 0.5) / scale - 0.5;
        const auto left = static_cast<std::ptrdiff_t>(std::floor(u - support));
        double sum = 0.0;
        for (std::size_t k = 0; k < t.width; ++k) {
            const std::ptrdiff_t j = left + static_cast<std::ptrdiff_t>(k);
            const double w = kscale * cubic(kscale * (u - static_cast<double>(j)));
            t.index[o * t.width + k] = reflect(j, in);
            t.weight[o * t.width + k] = w;
            sum += w;
        }
        for (std::size_t k = 0; k < t.width; ++k) t.weight[o * t.width + k] /= sum;
    }
    return t;
}

}  // namespace

Image load_image(const fs::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".bmp") return load_bmp(path);
    throw FormatError(path.string() + ": unsupported image format");
}

void save_png(const fs::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw InvalidInput("save_png: 1 or 3 channels");
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error(path.string() + ": " + img.message);
}

void save_bmp(const fs::path& path, const Image& image) {
    if (image.channels != 3) throw InvalidInput("save_bmp: 3 channels required");
    const std::size_t stride = (image.width * 3 + 3) & ~std::size_t{3};
    const std::uint32_t data_size = static_cast<std::uint32_t>(stride * image.height);
    std::vector<std::uint8_t> h(54, 0);
    auto put32 = [&](std::size_t at, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) h[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    };
    h[0] = 'B';
    h[1] = 'M';
    put32(2, 54 + data_size);
    put32(10, 54);
    put32(14, 40);
    put32(18, static_cast<std::uint32_t>(image.width));
    put32(22, static_cast<std::uint32_t>(image.height));
    h[26] = 1;
    h[28] = 24;
    put32(34, data_size);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(h.data()), 54);
    std::vector<std::uint8_t> row(stride, 0);
    for (std::size_t y = image.height; y-- > 0;) {
        for (std::size_t x = 0; x < image.width; ++x) {
            const std::uint8_t* px = image.pixels.data() + (y * image.width + x) * 3;
            row[x * 3] = px[2];
            row[x * 3 + 1] = px[1];
            row[x * 3 + 2] = px[0];
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(stride));
    }
}

std::vector<Image> load_image_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string ext = lower_ext(e.path());
        if (e.is_regular_file() && (ext == ".png" || ext == ".bmp")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    for (const auto& f : files) images.push_back(load_image(f));
    if (images.empty()) throw FormatError(dir.string() + " contains no .png/.bmp images");
    return images;
}

Tensor rgb_to_y(const Image& image, bool normalized) {
    if (image.width == 0 || image.height == 0) throw InvalidInput("rgb_to_y: empty image");
    Tensor y({1, image.height, image.width});
    const double k = normalized ? 1.0 / 255.0 : 1.0;
    for (std::size_t i = 0; i < image.width * image.height; ++i) {
        const std::uint8_t* px = image.pixels.data() + i * image.channels;
        double v;
        if (image.channels >= 3)
            v = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        else
            v = px[0];
        y[i] = static_cast<float>(v * k);
    }
    return y;
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    return psnr_shaved(a, b, 0, peak);
}

double psnr_shaved(const Tensor& a, const Tensor& b, std::size_t border, double peak) {
    if (a.shape() != b.shape()) throw InvalidInput("psnr: shape mismatch");
    if (a.empty()) throw InvalidInput("psnr: zero-size input");
    const std::size_t h = a.rank() >= 2 ? a.dim(a.rank() - 2) : 1;
    const std::size_t w = a.dim(a.rank() - 1);
    if (2 * border >= h || 2 * border >= w) throw InvalidInput("psnr: border removes every pixel");
    const std::size_t planes = a.numel() / (h * w);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = border; y < h - border; ++y)
            for (std::size_t x = border; x < w - border; ++x) {
                const std::size_t i = (p * h + y) * w + x;
                const double d = static_cast<double>(a[i]) - b[i];
                sq += d * d;
                ++n;
            }
    const double mse = sq / static_cast<double>(n);
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(peak * peak / mse);
}

Tensor resize_bicubic(const Tensor& x, std::size_t out_h, std::size_t out_w, bool antialias) {
    if (x.rank() < 2) throw InvalidInput("resize_bicubic: need at least 2 dimensions");
    if (out_h == 0 || out_w == 0) throw InvalidInput("resize_bicubic: empty output");
    const std::size_t h = x.dim(x.rank() - 2);
    const std::size_t w = x.dim(x.rank() - 1);
    const std::size_t planes = x.numel() / (h * w);
    const Taps tx = make_taps(w, out_w, antialias);
    const Taps ty = make_taps(h, out_h, antialias);
    Shape shape = x.shape();
    shape[shape.size() - 2] = out_h;
    shape[shape.size() - 1] = out_w;
    Tensor out(shape);
    std::vector<double> tmp(h * out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = x.data() + p * h * w;
        for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double s = 0.0;
                for (std::size_t k = 0; k < tx.width; ++k)
                    s += tx.weight[ox * tx.width + k] * src[yy * w + tx.index[ox * tx.width + k]];
                tmp[yy * out_w + ox] = s;
            }
        float* dst = out.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double s = 0.0;
                for (std::size_t k = 0; k < ty.width; ++k)
                    s += ty.weight[oy * ty.width + k] * tmp[ty.index[oy * ty.width + k] * out_w + ox];
                dst[oy * out_w + ox] = static_cast<float>(s);
            }
    }
    return out;
}

Tensor crop_to_multiple(const Tensor& x, std::size_t scale) {
    if (scale == 0 || x.rank() < 2) throw InvalidInput("crop_to_multiple: bad arguments");
    const std::size_t h = x.dim(x.rank() - 2);
    const std::size_t w = x.dim(x.rank() - 1);
    const std::size_t ch = h - h % scale;
    const std::size_t cw = w - w % scale;
    if (ch == 0 || cw == 0) throw InvalidInput("crop_to_multiple: image smaller than scale");
    Shape shape = x.shape();
    shape[shape.size() - 2] = ch;
    shape[shape.size() - 1] = cw;
    Tensor out(shape);
    const std::size_t planes = x.numel() / (h * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < ch; ++y)
            std::copy_n(x.data() + (p * h + y) * w, cw, out.data() + (p * ch + y) * cw);
    return out;
}

double bicubic_baseline_psnr(const std::vector<Image>& images, std::size_t scale) {
    if (images.empty()) throw InvalidInput("bicubic_baseline_psnr: no images");
    if (scale < 2) throw InvalidInput("bicubic_baseline_psnr: scale must be >= 2");
    double total = 0.0;
    for (const auto& img : images) {
        const Tensor gt = crop_to_multiple(rgb_to_y(img, true), scale);
        const Tensor lr = resize_bicubic(gt, gt.dim(1) / scale, gt.dim(2) / scale, true);
        Tensor up = resize_bicubic(lr, gt.dim(1), gt.dim(2), true);
        for (float& v : up.values()) v = std::clamp(v, 0.0f, 1.0f);
        total += psnr_shaved(up, gt, scale, 1.0);
    }
    return total / static_cast<double>(images.size());
}

}  // namespace bt::data
