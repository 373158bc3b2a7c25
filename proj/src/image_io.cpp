#include "retseg/image_io.hpp"

#include <png.h>

#include <cmath>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace retseg {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> encode_raw(const std::vector<unsigned char>& raw, Index height,
                                      Index width, png_uint_32 format)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, raw.data(), 0, nullptr))
        throw Error(std::string("png encode: ") + image.message);
    std::vector<unsigned char> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, raw.data(), 0, nullptr))
        throw Error(std::string("png encode: ") + image.message);
    out.resize(size);
    return out;
}

std::vector<unsigned char> decode_raw(const std::vector<unsigned char>& bytes, png_uint_32 format,
                                      Index& height, Index& width)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw Error(std::string("png decode: ") + image.message);
    if (format == PNG_FORMAT_GRAY && (image.format & PNG_FORMAT_FLAG_COLOR)) {
        png_image_free(&image);
        throw Error("expected a single-channel png");
    }
    image.format = format;
    std::vector<unsigned char> raw(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr))
        throw Error(std::string("png decode: ") + image.message);
    height = image.height;
    width = image.width;
    return raw;
}

unsigned char quantize(double v)
{
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string numbered(const char* prefix, Index frame)
{
    std::ostringstream os;
    os << prefix << std::setw(4) << std::setfill('0') << frame << ".png";
    return os.str();
}

}  // namespace

std::vector<unsigned char> encode_png(const Frame& frame)
{
    std::vector<unsigned char> raw(static_cast<std::size_t>(frame.height * frame.width * 3));
    for (Index i = 0; i < frame.height * frame.width; ++i)
        for (int ch = 0; ch < 3; ++ch) raw[i * 3 + ch] = quantize(frame.pixels(i, ch));
    return encode_raw(raw, frame.height, frame.width, PNG_FORMAT_RGB);
}

std::vector<unsigned char> encode_png(const LabelMask& mask)
{
    if (mask.size() > 0 && (mask.minCoeff() < 0 || mask.maxCoeff() > 255))
        throw Error("mask labels must fit in 8 bits");
    std::vector<unsigned char> raw(static_cast<std::size_t>(mask.size()));
    for (Index r = 0; r < mask.rows(); ++r)
        for (Index c = 0; c < mask.cols(); ++c)
            raw[r * mask.cols() + c] = static_cast<unsigned char>(mask(r, c));
    return encode_raw(raw, mask.rows(), mask.cols(), PNG_FORMAT_GRAY);
}

Frame decode_png_rgb(const std::vector<unsigned char>& bytes)
{
    Index h = 0, w = 0;
    auto raw = decode_raw(bytes, PNG_FORMAT_RGB, h, w);
    Frame frame(h, w);
    for (Index i = 0; i < h * w; ++i)
        for (int ch = 0; ch < 3; ++ch) frame.pixels(i, ch) = raw[i * 3 + ch] / 255.0;
    return frame;
}

LabelMask decode_png_gray(const std::vector<unsigned char>& bytes)
{
    Index h = 0, w = 0;
    auto raw = decode_raw(bytes, PNG_FORMAT_GRAY, h, w);
    LabelMask mask(h, w);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) mask(r, c) = raw[r * w + c];
    return mask;
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

std::vector<unsigned char> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string frame_file_name(Index frame) { return numbered("frame_", frame); }
std::string mask_file_name(Index frame) { return numbered("mask_", frame); }

void save_sequence(const fs::path& dir, const VideoTensor& video, const std::vector<LabelMask>& masks,
                   std::int32_t object_count)
{
    require_valid_video(video);
    if (!masks.empty() && static_cast<Index>(masks.size()) != video.frame_count())
        throw Error("mask count does not match frame count");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
    for (Index j = 0; j < video.frame_count(); ++j) write_file(dir / frame_file_name(j), encode_png(video.frames[j]));
    save_masks(dir, masks);
    std::ofstream meta(dir / "meta.txt");
    if (!meta) throw Error("cannot write " + (dir / "meta.txt").string());
    meta << "height=" << video.height() << "\n"
         << "width=" << video.width() << "\n"
         << "frame_count=" << video.frame_count() << "\n"
         << "K=" << object_count << "\n";
}

void save_masks(const fs::path& dir, const std::vector<LabelMask>& masks)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
    for (std::size_t j = 0; j < masks.size(); ++j)
        write_file(dir / mask_file_name(static_cast<Index>(j)), encode_png(masks[j]));
}

Sequence load_sequence(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw Error("not a sequence directory: " + dir.string());
    const KeyValues meta = read_key_values(dir / "meta.txt");
    auto field = [&](const char* key) -> Index {
        auto it = meta.find(key);
        if (it == meta.end()) throw Error(std::string("meta.txt missing ") + key);
        return std::stoll(it->second);
    };
    Sequence seq;
    seq.name = dir.filename().string();
    if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
    const Index n = field("frame_count");
    const Index h = field("height");
    const Index w = field("width");
    seq.object_count = static_cast<std::int32_t>(field("K"));
    for (Index j = 0; j < n; ++j) seq.video.frames.push_back(decode_png_rgb(read_file(dir / frame_file_name(j))));
    require_valid_video(seq.video);
    if (seq.video.height() != h || seq.video.width() != w) throw Error("meta.txt size disagrees with frames");
    if (fs::exists(dir / mask_file_name(0))) {
        for (Index j = 0; j < n; ++j) {
            seq.masks.push_back(decode_png_gray(read_file(dir / mask_file_name(j))));
            if (seq.masks.back().rows() != h || seq.masks.back().cols() != w)
                throw Error("mask " + std::to_string(j) + " size disagrees with frames");
            if (max_label(seq.masks.back()) > seq.object_count)
                throw Error("mask " + std::to_string(j) + " has a label above K");
        }
    }
    return seq;
}

KeyValues parse_key_values(const std::string& text)
{
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("line " + std::to_string(lineno) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const fs::path& path)
{
    auto bytes = read_file(path);
    return parse_key_values(std::string(bytes.begin(), bytes.end()));
}

}  // namespace retseg
