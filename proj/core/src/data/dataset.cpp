#include "bt/data/dataset.hpp"

#include <zlib.h>

#include <fstream>
#include <string>

#include "bt/error.hpp"

namespace bt::data {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes;
    std::uint8_t buf[1 << 16];
    for (;;) {
        const int n = gzread(f, buf, sizeof(buf));
        if (n < 0) {
            gzclose(f);
            throw FormatError("read error in " + path.string());
        }
        if (n == 0) break;
        bytes.insert(bytes.end(), buf, buf + n);
    }
    gzclose(f);
    return bytes;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
           std::uint32_t{p[3]};
}

void put_be32(std::ofstream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                       static_cast<char>(v >> 8), static_cast<char>(v)};
    os.write(b, 4);
}

std::uint32_t idx_magic(const IdxArray& a) {
    return 0x00000800u | static_cast<std::uint32_t>(a.dims.size());
}

}  // namespace

void LabeledImageSet::validate() const {
    if (count == 0) throw FormatError("image set is empty");
    if (image_size() == 0) throw FormatError("image set has zero-size images");
    if (pixels.size() != count * image_size()) throw FormatError("image set pixel count mismatch");
    if (labels.size() != count) throw FormatError("image set label count mismatch");
    for (auto l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= class_count)
            throw FormatError("label " + std::to_string(l) + " out of range for " +
                              std::to_string(class_count) + " classes");
}

Tensor LabeledImageSet::to_tensor(std::size_t begin, std::size_t end) const {
    if (begin > end || end > count) throw InvalidInput("image range out of bounds");
    Tensor t({end - begin, channels, height, width});
    const std::size_t sz = image_size();
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(pixels[begin * sz + i]) / 255.0f;
    return t;
}

LabeledImageSet LabeledImageSet::head(std::size_t n) const {
    if (n == 0 || n >= count) return *this;
    LabeledImageSet out = *this;
    out.count = n;
    out.pixels.resize(n * image_size());
    out.labels.resize(n);
    return out;
}

IdxArray read_idx(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4) throw FormatError(path.string() + ": truncated IDX header");
    if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08)
        throw FormatError(path.string() + ": bad IDX magic (expected unsigned-byte data)");
    const std::size_t rank = bytes[3];
    if (rank == 0 || rank > 4) throw FormatError(path.string() + ": unsupported IDX rank");
    if (bytes.size() < 4 + 4 * rank) throw FormatError(path.string() + ": truncated IDX header");
    IdxArray a;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        a.dims.push_back(be32(bytes.data() + 4 + 4 * i));
        n *= a.dims.back();
    }
    const std::size_t offset = 4 + 4 * rank;
    if (bytes.size() - offset < n) throw FormatError(path.string() + ": truncated IDX data");
    if (bytes.size() - offset > n) throw FormatError(path.string() + ": trailing bytes after IDX data");
    a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return a;
}

void write_idx(const fs::path& path, const IdxArray& a) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    put_be32(os, idx_magic(a));
    for (auto d : a.dims) put_be32(os, d);
    os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size()));
}

LabeledImageSet load_idx(const fs::path& images, const fs::path& labels, std::size_t class_count) {
    const IdxArray img = read_idx(images);
    const IdxArray lab = read_idx(labels);
    if (idx_magic(img) != kIdxImages) throw FormatError(images.string() + ": not an IDX image file");
    if (idx_magic(lab) != kIdxLabels) throw FormatError(labels.string() + ": not an IDX label file");
    if (img.dims[0] != lab.dims[0]) throw FormatError("IDX image and label counts differ");
    LabeledImageSet set;
    set.count = img.dims[0];
    set.channels = 1;
    set.height = img.dims[1];
    set.width = img.dims[2];
    set.class_count = class_count;
    set.pixels = img.data;
    set.labels.assign(lab.data.begin(), lab.data.end());
    set.validate();
    return set;
}

void save_idx(const fs::path& images, const fs::path& labels, const LabeledImageSet& set) {
    set.validate();
    if (set.channels != 1) throw InvalidInput("IDX images must be single-channel");
    write_idx(images, {{static_cast<std::uint32_t>(set.count), static_cast<std::uint32_t>(set.height),
                        static_cast<std::uint32_t>(set.width)},
                       set.pixels});
    IdxArray lab{{static_cast<std::uint32_t>(set.count)}, {}};
    for (auto l : set.labels) lab.data.push_back(static_cast<std::uint8_t>(l));
    write_idx(labels, lab);
}

LabeledImageSet load_cifar_binary(std::span<const fs::path> files) {
    LabeledImageSet set;
    set.channels = 3;
    set.height = 32;
    set.width = 32;
    set.class_count = 10;
    for (const auto& f : files) {
        const auto bytes = read_file_bytes(f);
        if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
            throw FormatError(f.string() + ": size is not a multiple of " +
                              std::to_string(kCifarRecordBytes) + "-byte records");
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
            set.labels.push_back(bytes[off]);
            set.pixels.insert(set.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                              bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
        }
    }
    set.count = set.labels.size();
    set.validate();
    return set;
}

LabeledImageSet load_cifar_binary(const fs::path& file) {
    return load_cifar_binary(std::span<const fs::path>(&file, 1));
}

void save_cifar_binary(const fs::path& file, const LabeledImageSet& set) {
    set.validate();
    if (set.channels != 3 || set.height != 32 || set.width != 32)
        throw InvalidInput("CIFAR records are 3x32x32");
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + file.string());
    for (std::size_t i = 0; i < set.count; ++i) {
        os.put(static_cast<char>(set.labels[i]));
        os.write(reinterpret_cast<const char*>(set.pixels.data() + i * set.image_size()),
                 static_cast<std::streamsize>(set.image_size()));
    }
}

}  // namespace bt::data
