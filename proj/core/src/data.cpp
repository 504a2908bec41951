#include "picl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace picl {

const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {"disk", "rectangle", "triangle", "ring", "cross", "ellipse"};
    return names;
}

int shape_class_id(const std::string& name) {
    const auto& names = shape_class_names();
    for (size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown shape class: " + name);
}

bool coverage_filter(const std::vector<double>& mask) {
    int fg = 0;
    for (double v : mask) {
        if (!(v == 0.0 || v == 1.0)) throw std::invalid_argument("coverage_filter: mask is not binary");
        fg += v == 1.0;
    }
    return fg >= 30;
}

namespace {

struct ShapeGeom {
    int cls;
    double cy, cx, size, rot, aspect;
};

bool inside_shape(const ShapeGeom& g, double y, double x) {
    double dy = y - g.cy, dx = x - g.cx;
    double c = std::cos(g.rot), s = std::sin(g.rot);
    double u = c * dx + s * dy;
    double v = -s * dx + c * dy;
    double sz = g.size;
    switch (g.cls) {
        case 0:  // disk
            return u * u + v * v <= sz * sz;
        case 1:  // rectangle
            return std::abs(u) <= sz && std::abs(v) <= sz * g.aspect;
        case 2: {  // triangle (equilateral, circumradius sz)
            double vy[3], vx[3];
            for (int i = 0; i < 3; ++i) {
                double a = 1.5707963267948966 + i * 2.0943951023931953;
                vx[i] = sz * std::cos(a);
                vy[i] = sz * std::sin(a);
            }
            double sign = 0;
            for (int i = 0; i < 3; ++i) {
                int j = (i + 1) % 3;
                double cross = (vx[j] - vx[i]) * (v - vy[i]) - (vy[j] - vy[i]) * (u - vx[i]);
                if (i == 0) sign = cross;
                if (cross * sign < 0) return false;
            }
            return true;
        }
        case 3: {  // ring
            double r2 = u * u + v * v;
            double inner = 0.55 * sz;
            return r2 <= sz * sz && r2 >= inner * inner;
        }
        case 4: {  // cross
            double arm = 0.35 * sz;
            return (std::abs(u) <= sz && std::abs(v) <= arm) || (std::abs(v) <= sz && std::abs(u) <= arm);
        }
        case 5: {  // ellipse
            double b = sz * g.aspect;
            return (u * u) / (sz * sz) + (v * v) / (b * b) <= 1.0;
        }
        default:
            throw std::invalid_argument("inside_shape: bad class id");
    }
}

ShapeGeom random_geom(int cls, int res, RngStream& rng, bool distractor) {
    ShapeGeom g;
    g.cls = cls;
    g.cy = rng.uniform_in(distractor ? 0.15 : 0.3, distractor ? 0.85 : 0.7) * res;
    g.cx = rng.uniform_in(distractor ? 0.15 : 0.3, distractor ? 0.85 : 0.7) * res;
    g.size = rng.uniform_in(distractor ? 0.08 : 0.18, distractor ? 0.16 : 0.3) * res;
    g.rot = rng.uniform_in(0.0, 6.283185307179586);
    g.aspect = rng.uniform_in(0.45, 0.8);
    return g;
}

struct CaseStats {
    double fg, bg, tex_amp, tex_fy, tex_fx, tex_phase;
};

CaseStats case_stats(uint64_t seed, int case_id) {
    RngStream rng = RngStream(seed, 0xca5e).sub(static_cast<uint64_t>(case_id));
    CaseStats st;
    st.fg = rng.uniform_in(0.6, 0.95);
    st.bg = rng.uniform_in(0.15, 0.4);
    st.tex_amp = rng.uniform_in(0.02, 0.05);
    st.tex_fy = rng.uniform_in(0.5, 2.5);
    st.tex_fx = rng.uniform_in(0.5, 2.5);
    st.tex_phase = rng.uniform_in(0.0, 6.283185307179586);
    return st;
}

}  // namespace

PoolEntry render_instance(int class_id, int case_id, int instance_id, int resolution, double noise_sigma,
                          const std::vector<int>& distractor_classes, uint64_t seed) {
    if (resolution < 16) throw std::invalid_argument("render_instance: resolution must be >= 16");
    CaseStats st = case_stats(seed, case_id);
    RngStream base = RngStream(seed, 0x1257a9ce).sub(static_cast<uint64_t>(case_id)).sub(static_cast<uint64_t>(instance_id));
    for (int attempt = 0; attempt < 100; ++attempt) {
        RngStream rng = base.sub(static_cast<uint64_t>(attempt));
        ShapeGeom target = random_geom(class_id, resolution, rng, false);
        int n_distr = distractor_classes.empty() ? 0 : 1 + static_cast<int>(rng.next_below(3));
        std::vector<ShapeGeom> distr;
        std::vector<double> distr_intensity;
        for (int i = 0; i < n_distr; ++i) {
            int dc = distractor_classes[static_cast<size_t>(rng.next_below(distractor_classes.size()))];
            distr.push_back(random_geom(dc, resolution, rng, true));
            double di = st.fg;
            for (int tr = 0; tr < 20 && std::abs(di - st.fg) < 0.15; ++tr) di = rng.uniform_in(0.15, 0.95);
            distr_intensity.push_back(di);
        }
        std::vector<double> img(static_cast<size_t>(resolution) * resolution);
        std::vector<double> mask(img.size(), 0.0);
        for (int y = 0; y < resolution; ++y) {
            for (int x = 0; x < resolution; ++x) {
                double v = st.bg + st.tex_amp * std::sin(6.283185307179586 * (st.tex_fy * y + st.tex_fx * x) / resolution +
                                                         st.tex_phase);
                for (size_t i = 0; i < distr.size(); ++i) {
                    if (inside_shape(distr[i], y + 0.5, x + 0.5)) v = distr_intensity[i];
                }
                bool in_target = inside_shape(target, y + 0.5, x + 0.5);
                if (in_target) {
                    v = st.fg;
                    mask[static_cast<size_t>(y) * resolution + x] = 1.0;
                }
                v += noise_sigma * rng.normal();
                img[static_cast<size_t>(y) * resolution + x] = std::clamp(v, 0.0, 1.0);
            }
        }
        if (!coverage_filter(mask)) continue;
        PoolEntry e;
        e.image = Tensor({resolution, resolution}, std::move(img));
        e.mask = Tensor({resolution, resolution}, std::move(mask));
        e.class_id = class_id;
        e.case_id = case_id;
        e.instance_id = instance_id;
        return e;
    }
    throw std::runtime_error("render_instance: coverage filter failed after 100 attempts");
}

std::vector<std::pair<Tensor, Tensor>> select_context(const std::vector<PoolEntry>& pool, int target_class,
                                                      int target_case, int target_instance, int n_context,
                                                      RngStream& rng) {
    std::vector<const PoolEntry*> same_case, same_class;
    for (const auto& e : pool) {
        if (e.class_id != target_class) continue;
        if (e.case_id == target_case && e.instance_id == target_instance) continue;  // the target itself
        if (e.case_id == target_case) {
            same_case.push_back(&e);
        } else {
            same_class.push_back(&e);
        }
    }
    if (static_cast<int>(same_case.size() + same_class.size()) < n_context) {
        throw std::runtime_error("select_context: fewer than " + std::to_string(n_context) +
                                 " same-class episodes in pool");
    }
    auto shuffle_tier = [&rng](std::vector<const PoolEntry*>& tier) {
        for (size_t i = tier.size(); i > 1; --i) std::swap(tier[i - 1], tier[rng.next_below(i)]);
    };
    shuffle_tier(same_case);
    shuffle_tier(same_class);
    std::vector<std::pair<Tensor, Tensor>> out;
    for (const auto* e : same_case) {
        if (static_cast<int>(out.size()) == n_context) break;
        out.emplace_back(e->image, e->mask);
    }
    for (const auto* e : same_class) {
        if (static_cast<int>(out.size()) == n_context) break;
        out.emplace_back(e->image, e->mask);
    }
    return out;
}

TaskInstance generate_episode(const DatasetManifest& m, const std::string& split, int episode_id) {
    bool train = split == "train";
    if (!train && split != "heldout") throw std::invalid_argument("generate_episode: unknown split " + split);
    const auto& classes = train ? m.train_classes : m.heldout_classes;
    if (classes.empty()) throw std::invalid_argument("generate_episode: empty class split");
    int split_off = train ? 0 : 1 << 24;
    RngStream rng = RngStream(m.seed, 0xe915).sub(static_cast<uint64_t>(split_off + episode_id));
    int cls = shape_class_id(classes[static_cast<size_t>(rng.next_below(classes.size()))]);

    // Distractors stay within the split's class set in training episodes so no
    // held-out class ever leaks into the train data.
    std::vector<int> distractors;
    if (train) {
        for (const auto& name : m.train_classes) {
            int id = shape_class_id(name);
            if (id != cls) distractors.push_back(id);
        }
    } else {
        for (const auto& name : shape_class_names()) {
            int id = shape_class_id(name);
            if (id != cls) distractors.push_back(id);
        }
    }

    int case_a = split_off + 2 * episode_id;
    int case_b = case_a + 1;
    int n_same = static_cast<int>(rng.next_below(static_cast<uint64_t>(m.n_context + 1)));
    std::vector<PoolEntry> pool;
    pool.push_back(render_instance(cls, case_a, 0, m.resolution, m.noise_sigma, distractors, m.seed));
    for (int i = 0; i < n_same; ++i) {
        pool.push_back(render_instance(cls, case_a, i + 1, m.resolution, m.noise_sigma, distractors, m.seed));
    }
    for (int i = 0; i < m.n_context; ++i) {
        pool.push_back(render_instance(cls, case_b, i, m.resolution, m.noise_sigma, distractors, m.seed));
    }

    TaskInstance task;
    task.target_image = pool[0].image;
    task.target_mask = pool[0].mask;
    task.context = select_context(pool, cls, case_a, 0, m.n_context, rng);
    task.class_id = cls;
    task.case_id = case_a;
    task.episode_id = episode_id;
    return task;
}

void write_pgm(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_pgm: expected [H,W]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    for (double v : img.data()) {
        int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        os.put(static_cast<char>(b));
    }
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
    auto next_int = [&is, &path]() {
        int v;
        while (is >> std::ws && is.peek() == '#') is.ignore(1 << 16, '\n');
        if (!(is >> v)) throw std::runtime_error("read_pgm: bad header in " + path);
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("read_pgm: expected maxval 255 in " + path);
    is.ignore(1);  // single whitespace after header
    std::vector<double> vals(static_cast<size_t>(w) * h);
    for (auto& v : vals) {
        int b = is.get();
        if (b < 0) throw std::runtime_error("read_pgm: truncated " + path);
        v = b / 255.0;
    }
    return Tensor({h, w}, std::move(vals));
}

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_manifest: cannot open " + path);
    os << "seed = " << m.seed << "\n";
    os << "resolution = " << m.resolution << "\n";
    os << "n_context = " << m.n_context << "\n";
    os << "noise_sigma = " << m.noise_sigma << "\n";
    os << "train_classes = " << join(m.train_classes) << "\n";
    os << "heldout_classes = " << join(m.heldout_classes) << "\n";
    os << "episodes_train = " << m.episodes_train << "\n";
    os << "episodes_heldout = " << m.episodes_heldout << "\n";
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path);
    DatasetManifest m;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        trim(key);
        trim(val);
        if (key == "seed") m.seed = std::stoull(val);
        else if (key == "resolution") m.resolution = std::stoi(val);
        else if (key == "n_context") m.n_context = std::stoi(val);
        else if (key == "noise_sigma") m.noise_sigma = std::stod(val);
        else if (key == "train_classes") m.train_classes = split_csv(val);
        else if (key == "heldout_classes") m.heldout_classes = split_csv(val);
        else if (key == "episodes_train") m.episodes_train = std::stoi(val);
        else if (key == "episodes_heldout") m.episodes_heldout = std::stoi(val);
    }
    return m;
}

namespace {

std::string ep_prefix(int episode_id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "ep%06d", episode_id);
    return buf;
}

}  // namespace

void write_dataset(const DatasetManifest& m, const std::string& dir) {
    for (const auto& c : m.train_classes) {
        for (const auto& h : m.heldout_classes) {
            if (c == h) throw std::invalid_argument("write_dataset: class " + c + " in both splits");
        }
    }
    fs::create_directories(dir);
    write_manifest(m, dir + "/manifest.txt");
    for (const std::string split : {"train", "heldout"}) {
        int count = split == "train" ? m.episodes_train : m.episodes_heldout;
        std::string sdir = dir + "/" + split;
        fs::create_directories(sdir);
        std::ofstream index(sdir + "/index.csv");
        if (!index) throw std::runtime_error("write_dataset: cannot open index in " + sdir);
        index << "episode,class,case\n";
        for (int e = 0; e < count; ++e) {
            TaskInstance task = generate_episode(m, split, e);
            std::string p = sdir + "/" + ep_prefix(e);
            write_pgm(p + "_target.pgm", task.target_image);
            write_pgm(p + "_mask.pgm", task.target_mask);
            for (size_t i = 0; i < task.context.size(); ++i) {
                write_pgm(p + "_ctx" + std::to_string(i) + "_img.pgm", task.context[i].first);
                write_pgm(p + "_ctx" + std::to_string(i) + "_msk.pgm", task.context[i].second);
            }
            index << e << "," << shape_class_names()[static_cast<size_t>(task.class_id)] << "," << task.case_id << "\n";
        }
    }
}

std::vector<TaskInstance> load_split(const std::string& dir, const std::string& split) {
    DatasetManifest m = read_manifest(dir + "/manifest.txt");
    std::string sdir = dir + "/" + split;
    std::ifstream index(sdir + "/index.csv");
    if (!index) throw std::runtime_error("load_split: missing " + sdir + "/index.csv");
    std::string line;
    std::getline(index, line);  // header
    std::vector<TaskInstance> out;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        auto parts = split_csv(line);
        if (parts.size() != 3) throw std::runtime_error("load_split: bad index row: " + line);
        TaskInstance t;
        t.episode_id = std::stoi(parts[0]);
        t.class_id = shape_class_id(parts[1]);
        t.case_id = std::stoi(parts[2]);
        std::string p = sdir + "/" + ep_prefix(t.episode_id);
        t.target_image = read_pgm(p + "_target.pgm");
        t.target_mask = read_pgm(p + "_mask.pgm");
        for (int i = 0; i < m.n_context; ++i) {
            t.context.emplace_back(read_pgm(p + "_ctx" + std::to_string(i) + "_img.pgm"),
                                   read_pgm(p + "_ctx" + std::to_string(i) + "_msk.pgm"));
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace picl
