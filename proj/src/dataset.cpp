#include "fgclip/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/rng.hpp"

namespace fgclip {

namespace {

std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("record is not an object");
    DatasetRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    rec.image_source = j.value("image_source", std::string());
    rec.short_caption = j.at("short_caption").get<std::string>();
    rec.long_caption = j.at("long_caption").get<std::string>();
    if (j.contains("regions")) {
        for (const auto& rj : j.at("regions")) {
            RegionBox box;
            box.x1 = rj.at("x1").get<double>();
            box.y1 = rj.at("y1").get<double>();
            box.x2 = rj.at("x2").get<double>();
            box.y2 = rj.at("y2").get<double>();
            box.confidence = rj.value("confidence", 1.0);
            box.positive_caption = rj.value("positive_caption", std::string());
            if (rj.contains("negative_captions"))
                for (const auto& n : rj.at("negative_captions"))
                    box.negative_captions.push_back(n.get<std::string>());
            box.difficulty = rj.value("difficulty", std::string());
            rec.regions.push_back(std::move(box));
        }
    }
    return rec;
}

// Hand-emitted so coordinates keep a fixed 6-decimal form.
std::string record_to_json_line(const DatasetRecord& rec) {
    std::ostringstream os;
    os << "{\"image_id\":\"" << json_escape(rec.image_id) << "\""
       << ",\"image_source\":\"" << json_escape(rec.image_source) << "\""
       << ",\"short_caption\":\"" << json_escape(rec.short_caption) << "\""
       << ",\"long_caption\":\"" << json_escape(rec.long_caption) << "\""
       << ",\"regions\":[";
    for (size_t i = 0; i < rec.regions.size(); ++i) {
        const auto& b = rec.regions[i];
        if (i) os << ',';
        os << "{\"x1\":" << format6(b.x1) << ",\"y1\":" << format6(b.y1)
           << ",\"x2\":" << format6(b.x2) << ",\"y2\":" << format6(b.y2)
           << ",\"confidence\":" << format6(b.confidence)
           << ",\"positive_caption\":\"" << json_escape(b.positive_caption) << "\""
           << ",\"negative_captions\":[";
        for (size_t k = 0; k < b.negative_captions.size(); ++k) {
            if (k) os << ',';
            os << '"' << json_escape(b.negative_captions[k]) << '"';
        }
        os << ']';
        if (!b.difficulty.empty()) os << ",\"difficulty\":\"" << json_escape(b.difficulty) << "\"";
        os << '}';
    }
    os << "]}";
    return os.str();
}

}  // namespace

std::vector<DatasetRecord> parse_records_jsonl(const std::string& text, ParseStats* stats) {
    ParseStats local;
    ParseStats& st = stats ? *stats : local;
    std::vector<DatasetRecord> records;
    std::istringstream is(text);
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++st.lines;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
            ++st.parsed;
        } catch (const std::exception& e) {
            ++st.malformed;
            st.diagnostics.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (st.lines > 0 && st.malformed * 10 > st.lines)
        throw DataError("more than 10% malformed records (" + std::to_string(st.malformed) + "/" +
                        std::to_string(st.lines) + "); first: " +
                        (st.diagnostics.empty() ? "?" : st.diagnostics.front()));
    return records;
}

std::vector<DatasetRecord> read_records_jsonl(const std::string& path, ParseStats* stats) {
    return parse_records_jsonl(read_file(path), stats);
}

std::string records_to_jsonl(const std::vector<DatasetRecord>& records) {
    std::string out;
    for (const auto& rec : records) {
        out += record_to_json_line(rec);
        out += '\n';
    }
    return out;
}

void write_records_jsonl(const std::vector<DatasetRecord>& records, const std::string& path) {
    atomic_write_file(path, records_to_jsonl(records));
}

std::vector<std::string> caption_corpus(const std::vector<DatasetRecord>& records) {
    std::vector<std::string> corpus;
    for (const auto& rec : records) {
        corpus.push_back(rec.short_caption);
        corpus.push_back(rec.long_caption);
        for (const auto& box : rec.regions) {
            corpus.push_back(box.positive_caption);
            for (const auto& n : box.negative_captions) corpus.push_back(n);
        }
    }
    return corpus;
}

namespace {

// Minimal binary PPM/PGM reader; pixels scaled to [0,1] and gray replicated
// across channels when needed.
TensorPtr load_image_pnm(const std::string& path, long image_size, long channels) {
    const std::string bytes = read_file(path);
    std::istringstream is(bytes);
    std::string magic;
    is >> magic;
    if (magic != "P6" && magic != "P5")
        throw DataError("load_image: " + path + " is not a binary PPM/PGM file");
    auto next_int = [&is, &path]() {
        // Skips whitespace and '#' comments.
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v;
        if (!(is >> v)) throw DataError("load_image: malformed header in " + path);
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    is.get();  // single whitespace after maxval
    if (maxval <= 0 || maxval > 255)
        throw DataError("load_image: unsupported maxval in " + path);
    if (w != image_size || h != image_size)
        throw DataError("load_image: " + path + " is " + std::to_string(w) + "x" +
                        std::to_string(h) + ", model expects " + std::to_string(image_size) + "x" +
                        std::to_string(image_size));
    const long file_ch = magic == "P6" ? 3 : 1;
    const size_t offset = static_cast<size_t>(is.tellg());
    if (bytes.size() < offset + static_cast<size_t>(w * h * file_ch))
        throw DataError("load_image: truncated pixel data in " + path);
    auto img = make_tensor({h, w, channels});
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long c = 0; c < channels; ++c) {
                const long src_c = file_ch == 1 ? 0 : c % 3;
                const unsigned char px = static_cast<unsigned char>(
                    bytes[offset + (y * w + x) * file_ch + src_c]);
                img->data[(y * w + x) * channels + c] =
                    static_cast<double>(px) / static_cast<double>(maxval);
            }
    return img;
}

}  // namespace

TensorPtr render_image(const std::string& image_source, long image_size, long channels) {
    constexpr const char* kPrefix = "synthetic:";
    if (image_source.rfind(kPrefix, 0) != 0)
        return load_image_pnm(image_source, image_size, channels);
    struct Block {
        double x1, y1, x2, y2;
        double rgb[3];
    };
    double base[3] = {0.5, 0.5, 0.5};
    double noise = 0.0;
    uint64_t seed = 0;
    std::vector<Block> blocks;

    std::istringstream is(image_source.substr(std::string(kPrefix).size()));
    std::string field;
    while (std::getline(is, field, ';')) {
        if (field.empty()) continue;
        const auto eq = field.find('=');
        if (eq == std::string::npos)
            throw DataError("render_image: malformed field \"" + field + "\"");
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        std::vector<double> nums;
        {
            std::istringstream vs(val);
            std::string item;
            while (std::getline(vs, item, ',')) nums.push_back(std::stod(item));
        }
        if (key == "base" && nums.size() == 3) {
            base[0] = nums[0];
            base[1] = nums[1];
            base[2] = nums[2];
        } else if (key == "block" && nums.size() == 7) {
            blocks.push_back({nums[0], nums[1], nums[2], nums[3], {nums[4], nums[5], nums[6]}});
        } else if (key == "noise" && nums.size() == 1) {
            noise = nums[0];
        } else if (key == "seed" && nums.size() == 1) {
            seed = static_cast<uint64_t>(nums[0]);
        } else {
            throw DataError("render_image: unknown or malformed field \"" + field + "\"");
        }
    }

    auto img = make_tensor({image_size, image_size, channels});
    for (long y = 0; y < image_size; ++y)
        for (long x = 0; x < image_size; ++x)
            for (long c = 0; c < channels; ++c)
                img->data[(y * image_size + x) * channels + c] = base[c % 3];
    for (const auto& b : blocks) {
        const long px1 = std::clamp<long>(static_cast<long>(std::floor(b.x1 * image_size)), 0, image_size);
        const long py1 = std::clamp<long>(static_cast<long>(std::floor(b.y1 * image_size)), 0, image_size);
        const long px2 = std::clamp<long>(static_cast<long>(std::ceil(b.x2 * image_size)), 0, image_size);
        const long py2 = std::clamp<long>(static_cast<long>(std::ceil(b.y2 * image_size)), 0, image_size);
        for (long y = py1; y < py2; ++y)
            for (long x = px1; x < px2; ++x)
                for (long c = 0; c < channels; ++c)
                    img->data[(y * image_size + x) * channels + c] = b.rgb[c % 3];
    }
    if (noise > 0.0) {
        Rng rng(seed);
        for (auto& v : img->data) {
            v += noise * (rng.next_real() - 0.5);
            v = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

}  // namespace fgclip
