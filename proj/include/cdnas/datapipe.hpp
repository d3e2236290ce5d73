#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdnas/image.hpp"
#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

// Multi-target label space: one background flag plus five defect flags per
// bounding box. Background excludes all defects; delamination tags fold into
// crack at parse time.

constexpr int kNumClasses = 6;

inline const char* class_name(int cls) {
    switch (cls) {
        case 0: return "background";
        case 1: return "crack";
        case 2: return "spallation";
        case 3: return "efflorescence";
        case 4: return "exposed_bars";
        case 5: return "corrosion_stain";
    }
    return "?";
}

inline int class_index(const std::string& name) {
    for (int c = 0; c < kNumClasses; ++c)
        if (name == class_name(c)) return c;
    if (name == "delamination") return 1;  // merged with crack
    return -1;
}

struct LabelVector {
    std::array<uint8_t, kNumClasses> v{};

    bool any() const {
        for (uint8_t f : v)
            if (f) return true;
        return false;
    }
    bool is_background() const { return v[0] != 0; }
    bool has_defect() const {
        for (int c = 1; c < kNumClasses; ++c)
            if (v[static_cast<size_t>(c)]) return true;
        return false;
    }
    void set(int cls) { v[static_cast<size_t>(cls)] = 1; }
    bool get(int cls) const { return v[static_cast<size_t>(cls)] != 0; }
    bool valid() const { return any() && !(is_background() && has_defect()); }

    bool operator==(const LabelVector&) const = default;
};

inline LabelVector background_label() {
    LabelVector l;
    l.set(0);
    return l;
}

struct ImageInfo {
    std::string id;
    std::string path;
    int width = 0, height = 0;
    std::string group;  // optional bridge key for grouped splits

    bool operator==(const ImageInfo&) const = default;
};

struct BoxRecord {
    std::string image_id;
    int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    LabelVector labels;

    int width() const { return xmax - xmin; }
    int height() const { return ymax - ymin; }
    int64_t area() const { return static_cast<int64_t>(width()) * height(); }

    bool operator==(const BoxRecord&) const = default;
};

inline bool boxes_intersect(const BoxRecord& a, const BoxRecord& b) {
    const int ix0 = std::max(a.xmin, b.xmin), ix1 = std::min(a.xmax, b.xmax);
    const int iy0 = std::max(a.ymin, b.ymin), iy1 = std::min(a.ymax, b.ymax);
    return ix1 > ix0 && iy1 > iy0;  // touching edges count as zero overlap
}

struct Manifest {
    std::vector<ImageInfo> images;
    std::vector<BoxRecord> boxes;

    const ImageInfo* find_image(const std::string& id) const {
        for (const ImageInfo& im : images)
            if (im.id == id) return &im;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Pascal-VOC style annotation files (one XML per image).

namespace xml_detail {

inline void fail(const std::string& path, const std::string& what) {
    throw std::invalid_argument("xml: " + what + " in " + path);
}

// Inner text range of the next <tag>...</tag> at or after `from`.
inline bool find_tag(const std::string& s, const std::string& tag, size_t from, size_t* inner_beg,
                     size_t* inner_end, size_t* after, const std::string& path) {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const size_t b = s.find(open, from);
    if (b == std::string::npos) return false;
    const size_t e = s.find(close, b + open.size());
    if (e == std::string::npos) fail(path, "unclosed <" + tag + ">");
    *inner_beg = b + open.size();
    *inner_end = e;
    *after = e + close.size();
    return true;
}

inline std::string tag_text(const std::string& s, const std::string& tag, const std::string& path,
                            bool required) {
    size_t b = 0, e = 0, after = 0;
    if (!find_tag(s, tag, 0, &b, &e, &after, path)) {
        if (required) fail(path, "missing <" + tag + ">");
        return {};
    }
    std::string t = s.substr(b, e - b);
    const auto first = t.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = t.find_last_not_of(" \t\r\n");
    return t.substr(first, last - first + 1);
}

inline int tag_int(const std::string& s, const std::string& tag, const std::string& path) {
    const std::string t = tag_text(s, tag, path, true);
    try {
        size_t used = 0;
        const int v = std::stoi(t, &used);
        if (used != t.size()) fail(path, "non-numeric <" + tag + ">");
        return v;
    } catch (const std::invalid_argument&) {
        fail(path, "non-numeric <" + tag + ">");
    } catch (const std::out_of_range&) {
        fail(path, "out-of-range <" + tag + ">");
    }
    return 0;
}

}  // namespace xml_detail

// Parses one annotation file into an image entry plus its boxes. Multiple
// objects sharing one box merge their labels, and one object may carry
// several <name> tags; both encodings are accepted.
inline void parse_voc_file(const std::string& path, ImageInfo* info, std::vector<BoxRecord>* boxes) {
    std::ifstream in(path);
    require(in.good(), "xml: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string s = buf.str();

    size_t ab = 0, ae = 0, after = 0;
    if (!xml_detail::find_tag(s, "annotation", 0, &ab, &ae, &after, path))
        xml_detail::fail(path, "missing <annotation>");
    const std::string ann = s.substr(ab, ae - ab);

    const std::string filename = xml_detail::tag_text(ann, "filename", path, true);
    info->id = std::filesystem::path(filename).stem().string();
    info->path = (std::filesystem::path(path).parent_path() / filename).string();
    const std::string size_block = xml_detail::tag_text(ann, "size", path, true);
    info->width = xml_detail::tag_int(size_block, "width", path);
    info->height = xml_detail::tag_int(size_block, "height", path);
    require(info->width > 0 && info->height > 0, "xml: non-positive image size in " + path);
    info->group = xml_detail::tag_text(ann, "group", path, false);
    if (info->group.empty()) info->group = xml_detail::tag_text(ann, "folder", path, false);

    // Merge labels of objects that share a box.
    std::map<std::array<int, 4>, LabelVector> merged;
    size_t pos = 0, ob = 0, oe = 0, onext = 0;
    while (xml_detail::find_tag(ann, "object", pos, &ob, &oe, &onext, path)) {
        const std::string obj = ann.substr(ob, oe - ob);
        pos = onext;
        const std::string bnd = xml_detail::tag_text(obj, "bndbox", path, true);
        std::array<int, 4> box = {xml_detail::tag_int(bnd, "xmin", path),
                                  xml_detail::tag_int(bnd, "ymin", path),
                                  xml_detail::tag_int(bnd, "xmax", path),
                                  xml_detail::tag_int(bnd, "ymax", path)};
        if (box[0] < 0 || box[1] < 0 || box[2] > info->width || box[3] > info->height ||
            box[0] >= box[2] || box[1] >= box[3])
            xml_detail::fail(path, "box out of bounds or empty");
        LabelVector& labels = merged[box];
        size_t npos = 0, nb = 0, ne = 0, nnext = 0;
        bool any_name = false;
        while (xml_detail::find_tag(obj, "name", npos, &nb, &ne, &nnext, path)) {
            std::string trimmed = obj.substr(nb, ne - nb);
            const auto f = trimmed.find_first_not_of(" \t\r\n");
            const auto l = trimmed.find_last_not_of(" \t\r\n");
            trimmed = f == std::string::npos ? "" : trimmed.substr(f, l - f + 1);
            const int cls = class_index(trimmed);
            if (cls < 0) xml_detail::fail(path, "unknown class \"" + trimmed + "\"");
            labels.set(cls);
            npos = nnext;
            any_name = true;
        }
        if (!any_name) xml_detail::fail(path, "object without <name>");
    }
    for (const auto& [box, labels] : merged) {
        if (!labels.valid())
            xml_detail::fail(path, "box labeled background and defect simultaneously");
        boxes->push_back({info->id, box[0], box[1], box[2], box[3], labels});
    }
}

// Scans a directory for *.xml annotation files (sorted for determinism).
inline Manifest parse_annotations(const std::string& dir, std::vector<std::string>* log = nullptr) {
    Manifest m;
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".xml")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty() && log) log->push_back("ingest: no annotation files in " + dir);
    for (const std::string& f : files) {
        ImageInfo info;
        std::vector<BoxRecord> boxes;
        parse_voc_file(f, &info, &boxes);
        for (const ImageInfo& existing : m.images)
            require(existing.id != info.id, "ingest: duplicate image id " + info.id);
        m.images.push_back(info);
        m.boxes.insert(m.boxes.end(), boxes.begin(), boxes.end());
    }
    return m;
}

inline void write_voc_xml(const std::string& path, const ImageInfo& info,
                          const std::vector<BoxRecord>& boxes) {
    std::ofstream out(path);
    require(out.good(), "xml: cannot write " + path);
    out << "<annotation>\n";
    out << "  <filename>" << std::filesystem::path(info.path).filename().string()
        << "</filename>\n";
    if (!info.group.empty()) out << "  <group>" << info.group << "</group>\n";
    out << "  <size><width>" << info.width << "</width><height>" << info.height
        << "</height></size>\n";
    for (const BoxRecord& b : boxes) {
        require(b.image_id == info.id, "xml: box for a different image");
        out << "  <object>\n";
        for (int c = 0; c < kNumClasses; ++c)
            if (b.labels.get(c)) out << "    <name>" << class_name(c) << "</name>\n";
        out << "    <bndbox><xmin>" << b.xmin << "</xmin><ymin>" << b.ymin << "</ymin><xmax>"
            << b.xmax << "</xmax><ymax>" << b.ymax << "</ymax></bndbox>\n";
        out << "  </object>\n";
    }
    out << "</annotation>\n";
    require(out.good(), "xml: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Background box sampling: draw (width, height) templates from the defect
// boxes themselves (matching their size and aspect distributions by
// construction) and place them so they never overlap any defect box.

inline int sample_background_boxes(Manifest& m, Rng& rng, int target = -1, int max_retries = 100,
                                   std::vector<std::string>* log = nullptr) {
    std::vector<const BoxRecord*> defects;
    std::map<std::string, std::vector<const BoxRecord*>> by_image;
    for (const BoxRecord& b : m.boxes)
        if (b.labels.has_defect()) {
            defects.push_back(&b);
            by_image[b.image_id].push_back(&b);
        }
    if (defects.empty()) {
        if (log) log->push_back("background: no defect boxes to mirror");
        return 0;
    }
    if (target < 0) {
        int64_t flag_total = 0;
        for (const BoxRecord* b : defects)
            for (int c = 1; c < kNumClasses; ++c) flag_total += b->labels.get(c);
        target = static_cast<int>(std::lround(static_cast<double>(flag_total) /
                                              (kNumClasses - 1)));
    }

    int added = 0;
    std::vector<BoxRecord> fresh;
    for (int i = 0; i < target; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < max_retries && !placed; ++attempt) {
            const ImageInfo& img =
                m.images[static_cast<size_t>(rng.uniform_int(m.images.size()))];
            const BoxRecord* tpl =
                defects[static_cast<size_t>(rng.uniform_int(defects.size()))];
            const int w = tpl->width(), h = tpl->height();
            if (w > img.width || h > img.height) continue;
            BoxRecord cand;
            cand.image_id = img.id;
            cand.xmin = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.width - w + 1)));
            cand.ymin = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.height - h + 1)));
            cand.xmax = cand.xmin + w;
            cand.ymax = cand.ymin + h;
            cand.labels = background_label();
            bool clash = false;
            auto it = by_image.find(img.id);
            if (it != by_image.end())
                for (const BoxRecord* d : it->second) clash = clash || boxes_intersect(cand, *d);
            if (!clash) {
                fresh.push_back(cand);
                ++added;
                placed = true;
            }
        }
        if (!placed && log)
            log->push_back("background: no free spot after " + std::to_string(max_retries) +
                           " tries (box " + std::to_string(i) + ")");
    }
    m.boxes.insert(m.boxes.end(), fresh.begin(), fresh.end());
    return added;
}

// ---------------------------------------------------------------------------
// Dataset splits. Assignment is per image (or per whole group), so no image
// ever contributes to two splits.

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

struct SplitResult {
    std::map<std::string, Split> by_image;
    int target = 150;
    std::array<std::array<int, kNumClasses>, 3> class_counts{};  // [split][class]
    bool feasible = true;
    std::vector<std::string> report;

    Split of(const std::string& image_id) const {
        const auto it = by_image.find(image_id);
        require(it != by_image.end(), "splits: unknown image " + image_id);
        return it->second;
    }
};

namespace split_detail {

struct Unit {  // one image or one whole group
    std::string key;
    std::vector<std::string> image_ids;
    std::array<int, kNumClasses> counts{};
};

// Greedy: while some class is short in this split, grab the unassigned unit
// with the most boxes of the currently scarcest deficient class.
inline void fill_split(std::vector<Unit>& units, std::vector<bool>& taken, int target,
                       std::array<int, kNumClasses>& got, std::vector<std::string>* short_classes) {
    while (true) {
        // Scarcest class still under target (by remaining supply).
        int pick_class = -1;
        int64_t pick_supply = 0;
        for (int c = 0; c < kNumClasses; ++c) {
            if (got[static_cast<size_t>(c)] >= target) continue;
            int64_t supply = 0;
            for (size_t u = 0; u < units.size(); ++u)
                if (!taken[u]) supply += units[u].counts[static_cast<size_t>(c)];
            if (supply == 0) continue;  // cannot improve this class any more
            if (pick_class < 0 || supply < pick_supply) {
                pick_class = c;
                pick_supply = supply;
            }
        }
        if (pick_class < 0) break;
        int best = -1;
        for (size_t u = 0; u < units.size(); ++u)
            if (!taken[u] && units[u].counts[static_cast<size_t>(pick_class)] > 0 &&
                (best < 0 || units[u].counts[static_cast<size_t>(pick_class)] >
                                 units[static_cast<size_t>(best)].counts[static_cast<size_t>(pick_class)]))
                best = static_cast<int>(u);
        taken[static_cast<size_t>(best)] = true;
        for (int c = 0; c < kNumClasses; ++c)
            got[static_cast<size_t>(c)] += units[static_cast<size_t>(best)].counts[static_cast<size_t>(c)];
    }
    if (short_classes)
        for (int c = 0; c < kNumClasses; ++c)
            if (got[static_cast<size_t>(c)] < target)
                short_classes->push_back(class_name(c));
}

}  // namespace split_detail

inline SplitResult make_splits(const Manifest& m, bool per_group, int target = 150) {
    SplitResult res;
    res.target = target;

    std::map<std::string, split_detail::Unit> table;
    std::vector<std::string> order;  // first-appearance order for determinism
    for (const ImageInfo& im : m.images) {
        const std::string key = per_group && !im.group.empty() ? im.group : im.id;
        if (!table.count(key)) {
            order.push_back(key);
            table[key].key = key;
        }
        table[key].image_ids.push_back(im.id);
    }
    for (const BoxRecord& b : m.boxes) {
        const ImageInfo* im = m.find_image(b.image_id);
        require(im != nullptr, "splits: box references unknown image " + b.image_id);
        const std::string key = per_group && !im->group.empty() ? im->group : im->id;
        for (int c = 0; c < kNumClasses; ++c)
            table[key].counts[static_cast<size_t>(c)] += b.labels.get(c);
    }
    std::vector<split_detail::Unit> units;
    for (const std::string& key : order) units.push_back(table[key]);

    std::vector<bool> taken(units.size(), false);
    std::vector<std::string> short_val, short_test;
    std::array<int, kNumClasses> got_val{}, got_test{};
    split_detail::fill_split(units, taken, target, got_val, &short_val);
    std::vector<bool> taken_after_val = taken;
    split_detail::fill_split(units, taken, target, got_test, &short_test);

    for (size_t u = 0; u < units.size(); ++u) {
        Split s = Split::train;
        if (taken_after_val[u])
            s = Split::val;
        else if (taken[u])
            s = Split::test;
        for (const std::string& id : units[u].image_ids) res.by_image[id] = s;
    }
    for (const BoxRecord& b : m.boxes) {
        const Split s = res.of(b.image_id);
        for (int c = 0; c < kNumClasses; ++c)
            res.class_counts[static_cast<size_t>(s)][static_cast<size_t>(c)] += b.labels.get(c);
    }
    res.feasible = short_val.empty() && short_test.empty();
    for (const std::string& c : short_val)
        res.report.push_back("splits: class " + c + " short of " + std::to_string(target) +
                             " in val");
    for (const std::string& c : short_test)
        res.report.push_back("splits: class " + c + " short of " + std::to_string(target) +
                             " in test");
    for (int s = 0; s < 3; ++s) {
        std::string line = std::string("splits: ") + split_name(static_cast<Split>(s)) + " counts:";
        for (int c = 0; c < kNumClasses; ++c)
            line += " " + std::string(class_name(c)) + "=" +
                    std::to_string(res.class_counts[static_cast<size_t>(s)][static_cast<size_t>(c)]);
        res.report.push_back(line);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Training-set balancing by virtual replication: every record appears
// ceil(largest class count / count of its rarest positive class) times.

inline std::array<int, kNumClasses> class_counts_of(const std::vector<BoxRecord>& recs) {
    std::array<int, kNumClasses> counts{};
    for (const BoxRecord& b : recs)
        for (int c = 0; c < kNumClasses; ++c)
            counts[static_cast<size_t>(c)] += b.labels.get(c);
    return counts;
}

inline std::vector<int> replication_counts(const std::vector<BoxRecord>& recs) {
    const auto counts = class_counts_of(recs);
    int max_count = 0;
    for (int c : counts) max_count = std::max(max_count, c);
    std::vector<int> reps(recs.size(), 1);
    for (size_t i = 0; i < recs.size(); ++i) {
        int rarest = 0;
        for (int c = 0; c < kNumClasses; ++c)
            if (recs[i].labels.get(c) &&
                (rarest == 0 || counts[static_cast<size_t>(c)] < rarest))
                rarest = counts[static_cast<size_t>(c)];
        require(rarest > 0, "balance: record with empty labels");
        reps[i] = static_cast<int>((max_count + rarest - 1) / rarest);
    }
    return reps;
}

// Expanded index list (records with their replicas adjacent); the training
// loop shuffles it per epoch.
inline std::vector<int> balance_by_replication(const std::vector<BoxRecord>& recs) {
    const std::vector<int> reps = replication_counts(recs);
    std::vector<int> out;
    for (size_t i = 0; i < recs.size(); ++i)
        for (int r = 0; r < reps[i]; ++r) out.push_back(static_cast<int>(i));
    return out;
}

// ---------------------------------------------------------------------------
// Patch extraction: crop the box, scale its smaller side to the patch size,
// then take a random (train) or centered (eval) square crop.

inline Tensor extract_patch(const Image& img, const BoxRecord& box, int patch, bool train_mode,
                            Rng& rng) {
    require(patch >= 32, "patch: size must be at least 32");
    require(box.width() > 0 && box.height() > 0, "patch: degenerate box");
    require(box.xmin >= 0 && box.ymin >= 0 && box.xmax <= img.w && box.ymax <= img.h,
            "patch: box outside image");
    const Image region = crop_image(img, box.xmin, box.ymin, box.width(), box.height());
    const double scale = static_cast<double>(patch) / std::min(region.w, region.h);
    const int nw = std::max(patch, static_cast<int>(std::lround(region.w * scale)));
    const int nh = std::max(patch, static_cast<int>(std::lround(region.h * scale)));
    const Image scaled = resize_bilinear(region, nw, nh);
    const int ox = train_mode
                       ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(nw - patch + 1)))
                       : (nw - patch) / 2;
    const int oy = train_mode
                       ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(nh - patch + 1)))
                       : (nh - patch) / 2;
    return image_to_tensor(crop_image(scaled, ox, oy, patch, patch));
}

// ---------------------------------------------------------------------------
// Dataset statistics for external plotting.

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<int> bins;

    void add(double x) {
        if (bins.empty()) return;
        const double t = (x - lo) / (hi - lo);
        const int i = std::clamp(static_cast<int>(t * static_cast<double>(bins.size())), 0,
                                 static_cast<int>(bins.size()) - 1);
        ++bins[static_cast<size_t>(i)];
    }
    int total() const {
        int s = 0;
        for (int b : bins) s += b;
        return s;
    }
};

struct DatasetStats {
    int total_images = 0;
    int total_boxes = 0;
    std::array<int, kNumClasses> class_counts{};      // boxes carrying each flag
    std::array<int, kNumClasses + 1> classes_per_box{};  // index = number of set flags
    std::map<int, int> boxes_per_image;
    Histogram size_all;                                // sqrt(box area), pixels
    std::array<Histogram, kNumClasses> size_per_class;
    Histogram aspect_all;                              // log2(w/h)
};

inline DatasetStats compute_stats(const Manifest& m) {
    DatasetStats s;
    s.total_images = static_cast<int>(m.images.size());
    s.total_boxes = static_cast<int>(m.boxes.size());
    double max_side = 1.0;
    for (const BoxRecord& b : m.boxes)
        max_side = std::max(max_side, std::sqrt(static_cast<double>(b.area())));
    s.size_all = {0.0, max_side + 1.0, std::vector<int>(16, 0)};
    for (auto& h : s.size_per_class) h = {0.0, max_side + 1.0, std::vector<int>(16, 0)};
    s.aspect_all = {-3.0, 3.0, std::vector<int>(24, 0)};

    std::map<std::string, int> per_image;
    for (const ImageInfo& im : m.images) per_image[im.id] = 0;
    for (const BoxRecord& b : m.boxes) {
        int flags = 0;
        for (int c = 0; c < kNumClasses; ++c)
            if (b.labels.get(c)) {
                ++s.class_counts[static_cast<size_t>(c)];
                ++flags;
            }
        ++s.classes_per_box[static_cast<size_t>(std::min(flags, kNumClasses))];
        ++per_image[b.image_id];
        const double side = std::sqrt(static_cast<double>(b.area()));
        s.size_all.add(side);
        for (int c = 0; c < kNumClasses; ++c)
            if (b.labels.get(c)) s.size_per_class[static_cast<size_t>(c)].add(side);
        s.aspect_all.add(std::log2(static_cast<double>(b.width()) / b.height()));
    }
    for (const auto& [id, n] : per_image) ++s.boxes_per_image[n];
    return s;
}

}  // namespace cdnas
