#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulse/generator.hpp"
#include "pulse/image.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

namespace detail {

inline std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

// Netpbm header tokens: whitespace-separated, '#' starts a comment to EOL.
struct PnmCursor {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;
    const std::string& path;

    std::string token() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') ++pos;
        if (pos == start) throw std::runtime_error(path + ": malformed header");
        return std::string(bytes.begin() + static_cast<long>(start),
                           bytes.begin() + static_cast<long>(pos));
    }

    std::size_t number() {
        const std::string t = token();
        std::size_t v = 0;
        for (char ch : t) {
            if (ch < '0' || ch > '9')
                throw std::runtime_error(path + ": malformed header token '" + t + "'");
            v = v * 10 + static_cast<std::size_t>(ch - '0');
        }
        return v;
    }
};

}  // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255 into [0,1]
/// intensities.
inline Image read_image(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::slurp(path);
    detail::PnmCursor cur{bytes, 0, path};
    const std::string magic = cur.token();
    std::size_t channels = 0;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw std::runtime_error(path + ": not a binary PGM/PPM file (magic '" + magic + "')");
    const std::size_t width = cur.number();
    const std::size_t height = cur.number();
    const std::size_t maxval = cur.number();
    if (width == 0 || height == 0) throw std::runtime_error(path + ": zero image dimension");
    if (maxval != 255)
        throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval) +
                                 " (only 255)");
    if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos]))
        throw std::runtime_error(path + ": malformed header");
    ++cur.pos;  // single whitespace byte separates header from payload
    const std::size_t need = width * height * channels;
    if (bytes.size() - cur.pos < need)
        throw std::runtime_error(path + ": truncated payload (need " + std::to_string(need) +
                                 " bytes, have " + std::to_string(bytes.size() - cur.pos) + ")");
    Image im(height, width, channels);
    // PPM payload is interleaved RGB; internal layout is planar.
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                const unsigned char v = bytes[cur.pos + (y * width + x) * channels + c];
                im.at(c, y, x) = static_cast<double>(v) / 255.0;
            }
    return im;
}

/// Writes PGM (1 channel) or PPM (3 channels), clamping to [0,1] and rounding
/// half-up to 8 bits.
inline void write_image(const std::string& path, const Image& im) {
    if (im.channels != 1 && im.channels != 3)
        throw std::invalid_argument(path + ": image must have 1 or 3 channels");
    std::string out = im.channels == 1 ? "P5" : "P6";
    out += "\n" + std::to_string(im.width) + " " + std::to_string(im.height) + "\n255\n";
    out.reserve(out.size() + im.numel());
    for (std::size_t y = 0; y < im.height; ++y)
        for (std::size_t x = 0; x < im.width; ++x)
            for (std::size_t c = 0; c < im.channels; ++c) {
                double v = im.at(c, y, x);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                out.push_back(static_cast<char>(
                    static_cast<unsigned char>(std::floor(v * 255.0 + 0.5))));
            }
    detail::spit(path, out);
}

// ---------------------------------------------------------------------------
// PLSW weight container: "PLSW" magic, u32 version, then entries of
// (u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload),
// all little-endian. A "meta" entry carries the architecture numbers.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::uint32_t kPlswVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct PlswCursor {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;
    const std::string& path;

    bool at_end() const { return pos >= bytes.size(); }

    std::uint32_t u32(const std::string& what) {
        if (bytes.size() - pos < 4)
            throw std::runtime_error(path + ": truncated while reading " + what);
        const std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) |
                                (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                                (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
                                (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }

    double f32(const std::string& what) {
        return static_cast<double>(std::bit_cast<float>(u32(what)));
    }
};

inline void append_entry(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.dims) put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : t.data) put_f32(out, v);
}

}  // namespace detail

/// Serializes the generator: weights as f32 tensors plus one "meta" entry of
/// [d, k, r0, slope, out_channels, n_widths, widths...]. Bit-exact for a
/// given spec.
inline void write_weights(const std::string& path, const GeneratorSpec& spec) {
    spec.validate(false);
    std::string out = "PLSW";
    detail::put_u32(out, detail::kPlswVersion);

    Tensor meta({6 + spec.widths.size()}, 0.0);
    meta.data[0] = static_cast<double>(spec.d);
    meta.data[1] = static_cast<double>(spec.k);
    meta.data[2] = static_cast<double>(spec.r0);
    meta.data[3] = spec.slope;
    meta.data[4] = static_cast<double>(spec.out_channels);
    meta.data[5] = static_cast<double>(spec.widths.size());
    for (std::size_t i = 0; i < spec.widths.size(); ++i)
        meta.data[6 + i] = static_cast<double>(spec.widths[i]);
    detail::append_entry(out, "meta", meta);

    detail::append_entry(out, "map.A", spec.map_A);
    detail::append_entry(out, "map.b", spec.map_b);
    detail::append_entry(out, "base", spec.base);
    for (std::size_t i = 0; i < spec.k; ++i) {
        const std::string tag = "layer" + std::to_string(i);
        const SynthLayer& l = spec.layers[i];
        detail::append_entry(out, tag + ".conv", l.conv);
        detail::append_entry(out, tag + ".style_scale_w", l.style_scale_w);
        detail::append_entry(out, tag + ".style_scale_b", l.style_scale_b);
        detail::append_entry(out, tag + ".style_shift_w", l.style_shift_w);
        detail::append_entry(out, tag + ".style_shift_b", l.style_shift_b);
        detail::append_entry(out, tag + ".noise_gain", l.noise_gain);
    }
    detail::append_entry(out, "out.conv", spec.out_conv);
    detail::append_entry(out, "out.bias", spec.out_bias);
    detail::spit(path, out);
}

/// Parses a PLSW file back into a generator, widening f32 to f64, and runs
/// the structural + invertibility checks.
inline GeneratorSpec read_weights(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::slurp(path);
    if (bytes.size() < 8 || bytes[0] != 'P' || bytes[1] != 'L' || bytes[2] != 'S' ||
        bytes[3] != 'W')
        throw std::runtime_error(path + ": bad magic (not a PLSW file)");
    detail::PlswCursor cur{bytes, 4, path};
    const std::uint32_t version = cur.u32("version");
    if (version != detail::kPlswVersion)
        throw std::runtime_error(path + ": unsupported PLSW version " +
                                 std::to_string(version));

    std::map<std::string, Tensor> entries;
    while (!cur.at_end()) {
        const std::uint32_t name_len = cur.u32("entry name length");
        if (bytes.size() - cur.pos < name_len)
            throw std::runtime_error(path + ": truncated entry name");
        std::string name(bytes.begin() + static_cast<long>(cur.pos),
                         bytes.begin() + static_cast<long>(cur.pos + name_len));
        cur.pos += name_len;
        const std::uint32_t rank = cur.u32("rank of '" + name + "'");
        if (rank > 8) throw std::runtime_error(path + ": implausible rank in '" + name + "'");
        std::vector<std::size_t> dims(rank);
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            dims[r] = cur.u32("dims of '" + name + "'");
            numel *= dims[r];
        }
        Tensor t(dims, 0.0);
        for (std::size_t i = 0; i < numel; ++i)
            t.data[i] = cur.f32("payload of '" + name + "'");
        if (!entries.emplace(std::move(name), std::move(t)).second)
            throw std::runtime_error(path + ": duplicate entry");
    }
    if (entries.empty()) throw std::runtime_error(path + ": no tensor entries");

    auto take = [&](const std::string& name) -> Tensor {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error(path + ": missing required entry '" + name + "'");
        return it->second;
    };

    const Tensor meta = take("meta");
    if (meta.rank() != 1 || meta.numel() < 6)
        throw std::runtime_error(path + ": malformed meta entry");
    auto meta_int = [&](std::size_t i, const char* what) -> std::size_t {
        const double v = meta.data[i];
        if (!(v >= 0) || v != std::floor(v))
            throw std::runtime_error(path + ": meta field " + what + " is not an integer");
        return static_cast<std::size_t>(v);
    };
    GeneratorSpec spec;
    spec.d = meta_int(0, "d");
    spec.k = meta_int(1, "k");
    spec.r0 = meta_int(2, "r0");
    spec.slope = meta.data[3];
    spec.out_channels = meta_int(4, "out_channels");
    const std::size_t n_widths = meta_int(5, "width count");
    if (meta.numel() != 6 + n_widths)
        throw std::runtime_error(path + ": meta width list length mismatch");
    for (std::size_t i = 0; i < n_widths; ++i)
        spec.widths.push_back(meta_int(6 + i, "width"));

    spec.map_A = take("map.A");
    spec.map_b = take("map.b");
    spec.base = take("base");
    for (std::size_t i = 0; i < spec.k; ++i) {
        const std::string tag = "layer" + std::to_string(i);
        SynthLayer l;
        l.conv = take(tag + ".conv");
        l.style_scale_w = take(tag + ".style_scale_w");
        l.style_scale_b = take(tag + ".style_scale_b");
        l.style_shift_w = take(tag + ".style_shift_w");
        l.style_shift_b = take(tag + ".style_shift_b");
        l.noise_gain = take(tag + ".noise_gain");
        spec.layers.push_back(std::move(l));
    }
    spec.out_conv = take("out.conv");
    spec.out_bias = take("out.bias");

    spec.validate(true);
    return spec;
}

}  // namespace pulse
