#pragma once

// Corpus handling: manifests, metadata ingestion, splits, triplets and label
// files, plus a synthetic portrait generator whose style parameters give an
// exact triplet oracle.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylespace/errors.hpp"
#include "stylespace/image_io.hpp"
#include "stylespace/nets.hpp"
#include "stylespace/tensor.hpp"

namespace stylespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ImageRecord {
    std::string id;
    std::string path;  // absolute once loaded
    std::string artist;
    std::optional<int> period;

    bool operator==(const ImageRecord&) const = default;
};

using Manifest = std::vector<ImageRecord>;

// ---- metadata cleaning ------------------------------------------------------

// Trim, collapse internal whitespace runs to one space, ASCII case-fold.
inline std::string clean_artist(std::string_view raw) {
    std::string out;
    bool pending_space = false;
    for (char ch : raw) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

// First maximal run of digits whose length is 3 or 4.
inline std::optional<int> parse_year(std::string_view date) {
    std::size_t i = 0;
    while (i < date.size()) {
        if (!std::isdigit(static_cast<unsigned char>(date[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < date.size() && std::isdigit(static_cast<unsigned char>(date[j]))) ++j;
        if (j - i == 3 || j - i == 4) return std::stoi(std::string(date.substr(i, j - i)));
        i = j;
    }
    return std::nullopt;
}

// Comma-separated rows with double-quote escaping; CRLF tolerated.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    char ch;
    auto end_row = [&] {
        row.push_back(std::move(field));
        field.clear();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
        any = false;
    };
    while (in.get(ch)) {
        any = true;
        if (quoted) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get(ch);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            end_row();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    if (quoted) throw DataError("unterminated quoted field in CSV");
    if (any || !row.empty()) end_row();
    return rows;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

struct IngestResult {
    Manifest manifest;
    std::vector<std::string> warnings;
};

// Reads an `id,path,artist,date` CSV. Bad rows are skipped with a warning;
// the manifest comes back ordered by id.
inline IngestResult ingest(const fs::path& image_dir, const fs::path& metadata_file) {
    std::ifstream in(metadata_file);
    if (!in) throw DataError("cannot open metadata file " + metadata_file.string());
    auto rows = parse_csv(in);
    if (rows.empty()) throw DataError("metadata file " + metadata_file.string() + " is empty");

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[clean_artist(rows[0][i])] = i;
    for (const char* need : {"id", "path", "artist", "date"}) {
        if (!col.count(need)) throw DataError(std::string("metadata header lacks column '") + need + "'");
    }

    IngestResult result;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto warn = [&](const std::string& msg) {
            result.warnings.push_back("row " + std::to_string(r + 1) + ": " + msg);
        };
        auto get = [&](const char* name) -> std::string {
            std::size_t i = col[name];
            return i < row.size() ? row[i] : std::string();
        };
        std::string id = get("id");
        id.erase(0, id.find_first_not_of(" \t"));
        id.erase(id.find_last_not_of(" \t") + 1);
        if (id.empty()) {
            warn("empty id, skipped");
            continue;
        }
        if (seen.count(id)) {
            warn("duplicate id '" + id + "', skipped");
            continue;
        }
        std::string artist = clean_artist(get("artist"));
        if (artist.empty()) {
            warn("empty artist for '" + id + "', skipped");
            continue;
        }
        fs::path p = get("path");
        if (p.empty()) {
            warn("empty path for '" + id + "', skipped");
            continue;
        }
        if (p.is_relative()) p = image_dir / p;
        p = fs::absolute(p).lexically_normal();
        if (!fs::is_regular_file(p)) {
            warn("missing file " + p.string() + " for '" + id + "', skipped");
            continue;
        }
        seen.insert(id);
        result.manifest.push_back({id, p.string(), artist, parse_year(get("date"))});
    }
    if (result.manifest.empty()) throw DataError("no valid rows in " + metadata_file.string());
    std::sort(result.manifest.begin(), result.manifest.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
    return result;
}

// Writes the manifest back out in the ingestion format.
inline void write_metadata_csv(const fs::path& file, const Manifest& manifest) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    out << "id,path,artist,date\n";
    for (const auto& r : manifest) {
        out << csv_field(r.id) << ',' << csv_field(r.path) << ',' << csv_field(r.artist) << ','
            << (r.period ? std::to_string(*r.period) : std::string()) << '\n';
    }
}

// ---- manifest files ---------------------------------------------------------

inline void validate_manifest(const Manifest& manifest) {
    std::set<std::string> ids;
    for (const auto& r : manifest) {
        if (r.id.empty()) throw DataError("manifest record with empty id");
        if (!ids.insert(r.id).second) throw DataError("duplicate id '" + r.id + "' in manifest");
        if (r.artist.empty()) throw DataError("empty artist for '" + r.id + "'");
    }
}

// One JSON object per line; paths are written relative to the manifest's directory.
inline void save_manifest(const fs::path& file, const Manifest& manifest) {
    validate_manifest(manifest);
    fs::path base = fs::absolute(file).parent_path();
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& r : manifest) {
        fs::path rel = fs::path(r.path).lexically_relative(base);
        json j = {{"id", r.id},
                  {"path", rel.empty() ? r.path : rel.generic_string()},
                  {"artist", r.artist},
                  {"period", r.period ? json(*r.period) : json(nullptr)}};
        out << j.dump() << '\n';
    }
}

namespace detail {

template <typename F>
void for_each_json_line(const fs::path& file, F&& f) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            f(j);
        } catch (const json::exception& e) {
            throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace detail

inline Manifest load_manifest(const fs::path& file) {
    fs::path base = fs::absolute(file).parent_path();
    Manifest manifest;
    detail::for_each_json_line(file, [&](const json& j) {
        ImageRecord r;
        r.id = j.at("id").get<std::string>();
        fs::path p = j.at("path").get<std::string>();
        r.path = (p.is_relative() ? base / p : p).lexically_normal().string();
        r.artist = j.at("artist").get<std::string>();
        if (j.contains("period") && !j["period"].is_null()) r.period = j["period"].get<int>();
        manifest.push_back(std::move(r));
    });
    validate_manifest(manifest);
    return manifest;
}

inline std::map<std::string, std::size_t> index_by_id(const Manifest& manifest) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < manifest.size(); ++i) idx[manifest[i].id] = i;
    return idx;
}

// ---- splits and triplets ----------------------------------------------------

// Random split by image; both halves keep the input order.
inline std::pair<Manifest, Manifest> split(const Manifest& manifest, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0 && test_fraction < 1)) throw ContractError("test_fraction must lie in (0, 1)");
    if (manifest.size() < 2) throw DataError("cannot split a manifest with fewer than 2 images");
    std::size_t n = manifest.size();
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
    std::pair<Manifest, Manifest> out;
    for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.second : out.first).push_back(manifest[i]);
    return out;
}

// An unlabeled triplet: the anchor and two candidates in presentation order.
struct Triplet {
    std::string anchor;
    std::string first;
    std::string second;

    bool operator==(const Triplet&) const = default;
};

// One triplet per image as anchor, candidates drawn without replacement from the rest.
inline std::vector<Triplet> make_triplets(const Manifest& manifest, std::uint64_t seed) {
    if (manifest.size() < 3) throw DataError("make_triplets needs at least 3 images");
    std::mt19937_64 rng(seed);
    std::size_t n = manifest.size();
    std::vector<Triplet> out;
    out.reserve(n);
    for (std::size_t a = 0; a < n; ++a) {
        // draw from the n-1 others by index remapping around the anchor
        std::uniform_int_distribution<std::size_t> first(0, n - 2);
        std::size_t i = first(rng);
        std::uniform_int_distribution<std::size_t> second(0, n - 3);
        std::size_t j = second(rng);
        if (j >= i) ++j;
        auto skip_anchor = [&](std::size_t k) { return k >= a ? k + 1 : k; };
        out.push_back({manifest[a].id, manifest[skip_anchor(i)].id, manifest[skip_anchor(j)].id});
    }
    return out;
}

inline void save_triplets(const fs::path& file, const std::vector<Triplet>& triplets) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& t : triplets) out << json{{"anchor", t.anchor}, {"candidates", {t.first, t.second}}}.dump() << '\n';
}

inline std::vector<Triplet> load_triplets(const fs::path& file) {
    std::vector<Triplet> out;
    detail::for_each_json_line(file, [&](const json& j) {
        const auto& c = j.at("candidates");
        if (c.size() != 2) throw DataError("triplet needs exactly two candidates");
        out.push_back({j.at("anchor").get<std::string>(), c[0].get<std::string>(), c[1].get<std::string>()});
    });
    return out;
}

struct TripletLabel {
    std::string anchor;
    std::string positive;
    std::string negative;
    std::string annotator;
    std::int64_t labeled_at = 0;  // unix seconds

    bool operator==(const TripletLabel&) const = default;
};

inline json label_json(const TripletLabel& l) {
    return {{"anchor", l.anchor},
            {"positive", l.positive},
            {"negative", l.negative},
            {"annotator", l.annotator},
            {"labeled_at", l.labeled_at}};
}

inline TripletLabel label_from_json(const json& j) {
    return {j.at("anchor").get<std::string>(), j.at("positive").get<std::string>(),
            j.at("negative").get<std::string>(), j.at("annotator").get<std::string>(),
            j.at("labeled_at").get<std::int64_t>()};
}

inline void validate_label(const TripletLabel& l, const std::map<std::string, std::size_t>* ids) {
    if (l.anchor == l.positive || l.anchor == l.negative || l.positive == l.negative) {
        throw DataError("triplet label repeats an id: " + l.anchor + ", " + l.positive + ", " + l.negative);
    }
    if (ids) {
        for (const auto* id : {&l.anchor, &l.positive, &l.negative}) {
            if (!ids->count(*id)) throw DataError("triplet label references unknown id '" + *id + "'");
        }
    }
}

inline void save_labels(const fs::path& file, const std::vector<TripletLabel>& labels) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& l : labels) out << label_json(l).dump() << '\n';
}

// Validates every label; with a manifest, ids must exist in it.
inline std::vector<TripletLabel> load_labels(const fs::path& file, const Manifest* manifest = nullptr) {
    std::optional<std::map<std::string, std::size_t>> ids;
    if (manifest) ids = index_by_id(*manifest);
    std::vector<TripletLabel> out;
    detail::for_each_json_line(file, [&](const json& j) {
        out.push_back(label_from_json(j));
        validate_label(out.back(), ids ? &*ids : nullptr);
    });
    return out;
}

// Labels whose three ids all belong to `manifest`.
inline std::vector<TripletLabel> labels_within(const std::vector<TripletLabel>& labels, const Manifest& manifest) {
    auto ids = index_by_id(manifest);
    std::vector<TripletLabel> out;
    for (const auto& l : labels) {
        if (ids.count(l.anchor) && ids.count(l.positive) && ids.count(l.negative)) out.push_back(l);
    }
    return out;
}

// ---- image loading ----------------------------------------------------------

// All manifest images decoded once, as 3x64x64 planes in manifest order.
class ImageStore {
   public:
    ImageStore() = default;

    explicit ImageStore(const Manifest& manifest) {
        for (const auto& r : manifest) add(r);
    }

    void add(const ImageRecord& r) {
        auto img = read_png(r.path, kImageChannels);
        if (img.height != kImageSize || img.width != kImageSize) {
            throw DataError(r.path + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            ", expected 64x64");
        }
        index_[r.id] = pixels_.size();
        pixels_.push_back(std::move(img.pixels));
    }

    std::size_t size() const { return pixels_.size(); }
    bool contains(const std::string& id) const { return index_.count(id) > 0; }

    const std::vector<float>& pixels(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("image '" + id + "' not loaded");
        return pixels_[it->second];
    }

    template <typename T = float>
    BasicTensor<T> batch(const std::vector<std::string>& ids) const {
        constexpr std::size_t plane = kImageChannels * kImageSize * kImageSize;
        std::vector<T> data;
        data.reserve(ids.size() * plane);
        for (const auto& id : ids) {
            const auto& px = pixels(id);
            data.insert(data.end(), px.begin(), px.end());
        }
        return BasicTensor<T>::from_data({ids.size(), kImageChannels, kImageSize, kImageSize}, std::move(data));
    }

   private:
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<float>> pixels_;
};

// ---- synthetic corpus -------------------------------------------------------

enum class BackgroundKind { plain, gradient, textured };

inline std::string to_string(BackgroundKind b) {
    switch (b) {
        case BackgroundKind::plain: return "plain";
        case BackgroundKind::gradient: return "gradient";
        case BackgroundKind::textured: return "textured";
    }
    return "plain";
}

inline BackgroundKind parse_background(const std::string& s) {
    if (s == "plain") return BackgroundKind::plain;
    if (s == "gradient") return BackgroundKind::gradient;
    if (s == "textured") return BackgroundKind::textured;
    throw DataError("unknown background kind '" + s + "'");
}

using Color = std::array<float, 3>;

struct SyntheticStyleParams {
    std::array<Color, 3> palette{};  // background, figure, accent
    float stroke_scale = 0.5f;       // (0, 1]
    float noise_amplitude = 0.f;     // [0, 1]
    BackgroundKind background = BackgroundKind::plain;
    int class_id = 0;

    bool operator==(const SyntheticStyleParams&) const = default;
};

// Per-image layout; varies freely within a class and carries no style.
struct ContentParams {
    float center_x = 32.f;
    float head_y = 24.f;
    float head_radius = 11.f;
    float shoulder_width = 21.f;
    float stroke_angle = 0.f;
    std::uint64_t noise_seed = 0;

    bool operator==(const ContentParams&) const = default;
};

// sqrt(0.5 mean sq palette diff + 0.2 d_stroke^2 + 0.2 d_noise^2 + 0.1 [backgrounds differ]).
// All coordinates already live in [0,1].
inline double style_distance(const SyntheticStyleParams& p, const SyntheticStyleParams& q) {
    double pal = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t k = 0; k < 3; ++k) {
            double d = static_cast<double>(p.palette[c][k]) - q.palette[c][k];
            pal += d * d;
        }
    }
    pal /= 9.0;
    double ds = static_cast<double>(p.stroke_scale) - q.stroke_scale;
    double dn = static_cast<double>(p.noise_amplitude) - q.noise_amplitude;
    double db = p.background == q.background ? 0.0 : 1.0;
    return std::sqrt(0.5 * pal + 0.2 * ds * ds + 0.2 * dn * dn + 0.1 * db);
}

struct SyntheticRender {
    Image image;            // 3 x 64 x 64
    Image background_mask;  // 1 x 64 x 64, 1 on background pixels
};

// A head-and-shoulders figure over a background. Palette, stroke and
// background kind set the look; content only moves the figure around.
inline SyntheticRender render_synthetic(const SyntheticStyleParams& style, const ContentParams& content) {
    constexpr std::size_t S = kImageSize;
    SyntheticRender out;
    out.image = {3, S, S, std::vector<float>(3 * S * S)};
    out.background_mask = {1, S, S, std::vector<float>(S * S)};
    const auto& bg = style.palette[0];
    const auto& fig = style.palette[1];
    const auto& acc = style.palette[2];
    const float period = 3.f + 13.f * style.stroke_scale;
    const float ca = std::cos(content.stroke_angle), sa = std::sin(content.stroke_angle);
    const float head_rx = content.head_radius, head_ry = content.head_radius * 1.25f;
    const float shoulder_top = content.head_y + head_ry + 3.f;
    std::mt19937_64 rng(content.noise_seed);
    std::uniform_real_distribution<float> noise(-1.f, 1.f);

    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            float fx = static_cast<float>(x), fy = static_cast<float>(y);
            float hx = (fx - content.center_x) / head_rx, hy = (fy - content.head_y) / head_ry;
            bool head = hx * hx + hy * hy <= 1.f;
            float sx = (fx - content.center_x) / content.shoulder_width;
            float sy = (fy - static_cast<float>(S)) / (static_cast<float>(S) - shoulder_top);
            bool shoulders = fy >= shoulder_top && sx * sx + sy * sy <= 1.f;
            bool neck = std::abs(fx - content.center_x) <= head_rx * 0.4f && fy >= content.head_y &&
                        fy <= shoulder_top + 1.f;
            bool figure = head || shoulders || neck;

            Color px;
            if (figure) {
                float u = fx * ca + fy * sa;
                float t = 0.5f + 0.5f * std::sin(6.2831853f * u / period);
                for (std::size_t c = 0; c < 3; ++c) px[c] = fig[c] + 0.6f * t * (acc[c] - fig[c]);
            } else {
                switch (style.background) {
                    case BackgroundKind::plain: px = bg; break;
                    case BackgroundKind::gradient: {
                        float t = fy / static_cast<float>(S - 1);
                        for (std::size_t c = 0; c < 3; ++c) px[c] = bg[c] + t * (acc[c] - bg[c]);
                        break;
                    }
                    case BackgroundKind::textured: {
                        float k = ((x / 8 + y / 8) % 2 == 0) ? 1.f : 0.6f;
                        for (std::size_t c = 0; c < 3; ++c) px[c] = bg[c] * k;
                        break;
                    }
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                float v = px[c] + 0.4f * style.noise_amplitude * noise(rng);
                out.image.at(c, y, x) = std::clamp(v, 0.f, 1.f);
            }
            out.background_mask.at(0, y, x) = figure ? 0.f : 1.f;
        }
    }
    return out;
}

struct SyntheticEntry {
    std::string id;
    SyntheticStyleParams style;
    ContentParams content;
    std::string mask_path;  // absolute once loaded
};

using ParamsTable = std::map<std::string, SyntheticEntry>;

inline json entry_json(const SyntheticEntry& e, const fs::path& base) {
    json palette = json::array();
    for (const auto& c : e.style.palette) palette.push_back({c[0], c[1], c[2]});
    fs::path rel = fs::path(e.mask_path).lexically_relative(base);
    return {{"id", e.id},
            {"palette", palette},
            {"stroke_scale", e.style.stroke_scale},
            {"noise_amplitude", e.style.noise_amplitude},
            {"background", to_string(e.style.background)},
            {"class_id", e.style.class_id},
            {"content",
             {{"center_x", e.content.center_x},
              {"head_y", e.content.head_y},
              {"head_radius", e.content.head_radius},
              {"shoulder_width", e.content.shoulder_width},
              {"stroke_angle", e.content.stroke_angle},
              {"noise_seed", e.content.noise_seed}}},
            {"mask", rel.empty() ? e.mask_path : rel.generic_string()}};
}

inline void save_params(const fs::path& file, const ParamsTable& table) {
    fs::path base = fs::absolute(file).parent_path();
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& [id, e] : table) out << entry_json(e, base).dump() << '\n';
}

inline ParamsTable load_params(const fs::path& file) {
    fs::path base = fs::absolute(file).parent_path();
    ParamsTable table;
    detail::for_each_json_line(file, [&](const json& j) {
        SyntheticEntry e;
        e.id = j.at("id").get<std::string>();
        const auto& pal = j.at("palette");
        if (pal.size() != 3) throw DataError("palette needs 3 colors for '" + e.id + "'");
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t k = 0; k < 3; ++k) e.style.palette[c][k] = pal.at(c).at(k).get<float>();
        }
        e.style.stroke_scale = j.at("stroke_scale").get<float>();
        e.style.noise_amplitude = j.at("noise_amplitude").get<float>();
        e.style.background = parse_background(j.at("background").get<std::string>());
        e.style.class_id = j.at("class_id").get<int>();
        const auto& c = j.at("content");
        e.content = {c.at("center_x").get<float>(),     c.at("head_y").get<float>(),
                     c.at("head_radius").get<float>(),  c.at("shoulder_width").get<float>(),
                     c.at("stroke_angle").get<float>(), c.at("noise_seed").get<std::uint64_t>()};
        fs::path mask = j.value("mask", std::string());
        e.mask_path = mask.empty() ? std::string() : (mask.is_relative() ? base / mask : mask).lexically_normal().string();
        table[e.id] = std::move(e);
    });
    return table;
}

struct SyntheticCorpus {
    Manifest manifest;
    ParamsTable params;
};

inline std::string synthetic_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05zu", i);
    return buf;
}

// Class centroids and per-image jitter, without touching the disk.
inline std::vector<SyntheticEntry> sample_synthetic(std::size_t n_images, std::size_t n_classes, std::uint64_t seed) {
    if (n_classes < 2 || n_images < n_classes) throw ContractError("need n_images >= n_style_classes >= 2");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    std::normal_distribution<float> jitter(0.f, 1.f);
    std::vector<SyntheticStyleParams> centroids(n_classes);
    for (std::size_t k = 0; k < n_classes; ++k) {
        auto& c = centroids[k];
        for (auto& color : c.palette)
            for (auto& v : color) v = unit(rng);
        c.stroke_scale = 0.15f + 0.85f * unit(rng);
        c.noise_amplitude = 0.5f * unit(rng);
        c.background = static_cast<BackgroundKind>(rng() % 3);
        c.class_id = static_cast<int>(k);
    }
    std::vector<SyntheticEntry> out(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
        auto& e = out[i];
        e.id = synthetic_id(i);
        e.style = centroids[i % n_classes];
        for (auto& color : e.style.palette)
            for (auto& v : color) v = std::clamp(v + 0.04f * jitter(rng), 0.f, 1.f);
        e.style.stroke_scale = std::clamp(e.style.stroke_scale + 0.04f * jitter(rng), 0.05f, 1.f);
        e.style.noise_amplitude = std::clamp(e.style.noise_amplitude + 0.03f * jitter(rng), 0.f, 1.f);
        if (unit(rng) < 0.1f) e.style.background = static_cast<BackgroundKind>(rng() % 3);
        e.content.center_x = 32.f + 6.f * (2.f * unit(rng) - 1.f);
        e.content.head_y = 24.f + 4.f * (2.f * unit(rng) - 1.f);
        e.content.head_radius = 9.f + 4.f * unit(rng);
        e.content.shoulder_width = 18.f + 6.f * unit(rng);
        e.content.stroke_angle = 3.1415927f * unit(rng);
        e.content.noise_seed = rng();
    }
    return out;
}

// Writes images/, masks/, manifest.jsonl and params.jsonl under `out_dir`.
inline SyntheticCorpus gen_synthetic(const fs::path& out_dir, std::size_t n_images, std::size_t n_classes,
                                     std::uint64_t seed) {
    auto entries = sample_synthetic(n_images, n_classes, seed);
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec || !fs::is_directory(out_dir / "images")) throw DataError("cannot create " + out_dir.string());
    fs::path root = fs::absolute(out_dir).lexically_normal();
    SyntheticCorpus corpus;
    for (auto& e : entries) {
        auto render = render_synthetic(e.style, e.content);
        fs::path img = root / "images" / (e.id + ".png");
        fs::path mask = root / "masks" / (e.id + ".png");
        write_png(img.string(), render.image);
        write_png(mask.string(), render.background_mask);
        e.mask_path = mask.string();
        corpus.manifest.push_back({e.id, img.string(), std::to_string(e.style.class_id), std::nullopt});
        corpus.params[e.id] = e;
    }
    save_manifest(root / "manifest.jsonl", corpus.manifest);
    save_params(root / "params.jsonl", corpus.params);
    return corpus;
}

// The candidate closer in style distance to the anchor becomes the positive;
// ties go to the lexicographically smaller id.
inline TripletLabel oracle_label(const Triplet& t, const ParamsTable& params) {
    auto style = [&](const std::string& id) -> const SyntheticStyleParams& {
        auto it = params.find(id);
        if (it == params.end()) throw ContractError("image '" + id + "' has no synthetic parameters");
        return it->second.style;
    };
    const auto& a = style(t.anchor);
    double d1 = style_distance(a, style(t.first));
    double d2 = style_distance(a, style(t.second));
    bool first_wins = d1 < d2 || (d1 == d2 && t.first < t.second);
    TripletLabel l;
    l.anchor = t.anchor;
    l.positive = first_wins ? t.first : t.second;
    l.negative = first_wins ? t.second : t.first;
    l.annotator = "oracle";
    l.labeled_at = 0;
    return l;
}

}  // namespace stylespace
