#include "cephalo/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "cephalo/error.hpp"

namespace cephalo {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'P', 'W'};

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<std::uint64_t>(d)); }

class Reader {
public:
    Reader(std::string bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    bool exhausted() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& why) const {
        throw IoError(path_ + ": " + why + " at byte " + std::to_string(pos_));
    }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) fail("truncated weight file");
    }
    std::string bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const std::filesystem::path& path, const NamedTensors& params) {
    std::string buf;
    std::size_t total = 16;
    for (const auto& [name, t] : params) total += name.size() + 8 + 8 * t.rank() + 8 * t.size();
    buf.reserve(total);

    buf.append(kMagic, 4);
    put_u32(buf, kWeightFormatVersion);
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u64(buf, d);
        for (double v : t.values()) put_f64(buf, v);
    }

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

NamedTensors load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes), path.string());

    if (r.str(4) != std::string(kMagic, 4)) r.fail("bad magic (not a weight file)");
    const std::uint32_t version = r.u32();
    if (version != kWeightFormatVersion) {
        r.fail("unsupported weight format version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    NamedTensors params;
    params.reserve(count);
    for (std::uint32_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = r.u64();
            n *= shape[i];
        }
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = r.f64();
        params.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    if (!r.exhausted()) r.fail("trailing bytes after last parameter");
    return params;
}

void save_model_weights(const std::filesystem::path& path, const Model& model) {
    NamedTensors params;
    for (const auto& [name, t] : model.named_params()) params.emplace_back(name, *t);
    save_weights(path, params);
}

void load_model_weights(const std::filesystem::path& path, Model& model) {
    NamedTensors loaded = load_weights(path);
    auto expected = model.named_params();
    if (loaded.size() != expected.size()) {
        throw IoError(path.string() + ": has " + std::to_string(loaded.size()) +
                      " parameters, model expects " + std::to_string(expected.size()));
    }
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        if (loaded[i].first != expected[i].first) {
            throw IoError(path.string() + ": parameter " + std::to_string(i) + " is '" +
                          loaded[i].first + "', model expects '" + expected[i].first + "'");
        }
        if (loaded[i].second.shape() != expected[i].second->shape()) {
            throw IoError(path.string() + ": parameter '" + loaded[i].first + "' has shape " +
                          shape_str(loaded[i].second.shape()) + ", model expects " +
                          shape_str(expected[i].second->shape()));
        }
    }
    std::size_t i = 0;
    for (Tensor* p : model.params()) *p = loaded[i++].second;
}

}  // namespace cephalo
