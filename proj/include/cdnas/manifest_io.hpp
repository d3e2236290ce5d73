#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdnas/datapipe.hpp"

namespace cdnas {

// Manifest and split files: line-delimited JSON, one record per line.

inline void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream out(path);
    require(out.good(), "manifest: cannot write " + path);
    for (const ImageInfo& im : m.images) {
        nlohmann::json j;
        j["type"] = "image";
        j["id"] = im.id;
        j["path"] = im.path;
        j["width"] = im.width;
        j["height"] = im.height;
        if (!im.group.empty()) j["group"] = im.group;
        out << j.dump() << "\n";
    }
    for (const BoxRecord& b : m.boxes) {
        nlohmann::json j;
        j["type"] = "box";
        j["image"] = b.image_id;
        j["box"] = {b.xmin, b.ymin, b.xmax, b.ymax};
        std::vector<std::string> labels;
        for (int c = 0; c < kNumClasses; ++c)
            if (b.labels.get(c)) labels.push_back(class_name(c));
        j["labels"] = labels;
        out << j.dump() << "\n";
    }
    require(out.good(), "manifest: write failed for " + path);
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "manifest: cannot open " + path);
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "image") {
                ImageInfo im;
                im.id = j.at("id").get<std::string>();
                im.path = j.at("path").get<std::string>();
                im.width = j.at("width").get<int>();
                im.height = j.at("height").get<int>();
                if (j.contains("group")) im.group = j.at("group").get<std::string>();
                m.images.push_back(im);
            } else if (type == "box") {
                BoxRecord b;
                b.image_id = j.at("image").get<std::string>();
                const auto& box = j.at("box");
                require(box.size() == 4, "box needs 4 coordinates");
                b.xmin = box[0].get<int>();
                b.ymin = box[1].get<int>();
                b.xmax = box[2].get<int>();
                b.ymax = box[3].get<int>();
                for (const auto& name : j.at("labels")) {
                    const int c = class_index(name.get<std::string>());
                    require(c >= 0, "unknown class \"" + name.get<std::string>() + "\"");
                    b.labels.set(c);
                }
                require(b.labels.valid(), "invalid label set");
                m.boxes.push_back(b);
            } else {
                require(false, "unknown record type \"" + type + "\"");
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("manifest: " + path + ":" + std::to_string(line_no) +
                                        ": " + e.what());
        }
    }
    return m;
}

inline void save_splits(const std::string& path, const SplitResult& sp) {
    std::ofstream out(path);
    require(out.good(), "splits: cannot write " + path);
    nlohmann::json meta;
    meta["type"] = "meta";
    meta["target"] = sp.target;
    meta["feasible"] = sp.feasible;
    meta["report"] = sp.report;
    out << meta.dump() << "\n";
    for (const auto& [id, split] : sp.by_image) {
        nlohmann::json j;
        j["type"] = "assign";
        j["image"] = id;
        j["split"] = split_name(split);
        out << j.dump() << "\n";
    }
    require(out.good(), "splits: write failed for " + path);
}

inline SplitResult load_splits(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "splits: cannot open " + path);
    SplitResult sp;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "meta") {
                sp.target = j.at("target").get<int>();
                sp.feasible = j.at("feasible").get<bool>();
                for (const auto& r : j.at("report")) sp.report.push_back(r.get<std::string>());
            } else if (type == "assign") {
                const std::string name = j.at("split").get<std::string>();
                Split s;
                if (name == "train")
                    s = Split::train;
                else if (name == "val")
                    s = Split::val;
                else if (name == "test")
                    s = Split::test;
                else
                    throw std::invalid_argument("unknown split \"" + name + "\"");
                sp.by_image[j.at("image").get<std::string>()] = s;
            } else {
                require(false, "unknown record type \"" + type + "\"");
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("splits: " + path + ":" + std::to_string(line_no) +
                                        ": " + e.what());
        }
    }
    return sp;
}

}  // namespace cdnas
