#include "cephalo/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "cephalo/error.hpp"

namespace cephalo {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[noreturn]] void decode_fail(const std::filesystem::path& path, std::size_t offset,
                              const std::string& why) {
    throw IoError(path.string() + ": " + why + " (byte offset " + std::to_string(offset) + ")");
}

// ---------------------------------------------------------------------------
// PGM (P5)

class PgmParser {
public:
    PgmParser(const std::string& bytes, const std::filesystem::path& path)
        : bytes_(bytes), path_(path) {}

    Tensor parse() {
        expect_magic();
        const long w = next_int("width");
        const long h = next_int("height");
        const long maxval = next_int("maxval");
        if (w < 1 || h < 1) decode_fail(path_, pos_, "non-positive image dimensions");
        if (maxval < 1 || maxval > 65535) decode_fail(path_, pos_, "maxval out of range");
        // Single whitespace byte separates the header from raster data.
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            decode_fail(path_, pos_, "missing whitespace before raster data");
        }
        ++pos_;

        const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
        const int bytes_per = maxval > 255 ? 2 : 1;
        if (bytes_.size() - pos_ < n * static_cast<std::size_t>(bytes_per)) {
            decode_fail(path_, bytes_.size(), "raster data truncated");
        }
        std::vector<double> values(n);
        const double scale = 1.0 / static_cast<double>(maxval);
        const unsigned char* raw = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
        if (bytes_per == 1) {
            for (std::size_t i = 0; i < n; ++i) values[i] = raw[i] * scale;
        } else {
            // 16-bit PGM samples are big-endian.
            for (std::size_t i = 0; i < n; ++i) {
                values[i] = (static_cast<unsigned>(raw[2 * i]) * 256u + raw[2 * i + 1]) * scale;
            }
        }
        return Tensor::from({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                            std::move(values));
    }

private:
    void expect_magic() {
        if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') {
            decode_fail(path_, 0, "not a P5 PGM file");
        }
        pos_ = 2;
    }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                return;
            }
        }
    }

    long next_int(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            decode_fail(path_, pos_, std::string("expected integer ") + what);
        }
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1000000000L) decode_fail(path_, pos_, std::string(what) + " too large");
            ++pos_;
        }
        return v;
    }

    const std::string& bytes_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// PNG via libpng; a counting reader gives error messages a byte offset.

struct PngReadState {
    const std::string* bytes;
    std::size_t pos;
    std::string error;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t count) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + count > st->bytes->size()) {
        png_error(png, "unexpected end of file");
        return;
    }
    std::memcpy(out, st->bytes->data() + st->pos, count);
    st->pos += count;
}

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* st = static_cast<PngReadState*>(png_get_error_ptr(png));
    if (st && st->error.empty()) st->error = msg;
    longjmp(png_jmpbuf(png), 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

Tensor parse_png(const std::string& bytes, const std::filesystem::path& path) {
    PngReadState state{&bytes, 0, {}};
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, &state, png_error_fn, png_warn_fn);
    if (!png) throw IoError(path.string() + ": libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError(path.string() + ": libpng init failed");
    }

    std::vector<double> values;
    std::size_t width = 0, height = 0;

    if (setjmp(png_jmpbuf(png))) {
        const std::size_t offset = state.pos;
        const std::string why = state.error.empty() ? "decode error" : state.error;
        png_destroy_read_struct(&png, &info, nullptr);
        decode_fail(path, offset, why);
    }

    png_set_read_fn(png, &state, png_read_fn);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        const std::size_t offset = state.pos;
        png_destroy_read_struct(&png, &info, nullptr);
        decode_fail(path, offset,
                    "unsupported color type " + std::to_string(color) +
                        " (only 8/16-bit grayscale is supported)");
    }
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    png_read_update_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> row(rowbytes);
    values.resize(width * height);
    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    for (std::size_t y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        if (depth == 16) {
            // 16-bit PNG samples arrive big-endian.
            for (std::size_t x = 0; x < width; ++x) {
                values[y * width + x] =
                    (static_cast<unsigned>(row[2 * x]) * 256u + row[2 * x + 1]) * scale;
            }
        } else {
            for (std::size_t x = 0; x < width; ++x) values[y * width + x] = row[x] * scale;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return Tensor::from({1, height, width}, std::move(values));
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0) {
        return parse_png(bytes, path);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
        return PgmParser(bytes, path).parse();
    }
    throw IoError(path.string() + ": unsupported image format (expected PGM P5 or PNG)");
}

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw ShapeError("save_pgm: image must be (1, H, W), got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    buf.reserve(buf.size() + h * w);
    for (double v : image.values()) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace cephalo
