#include "fetalseg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fetalseg::svg {

namespace {

const char* kPalette[10] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
                            "#aa3377", "#bbbbbb", "#e07020", "#44aa99", "#332288"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

class Doc {
public:
    Doc(int w, int h) : w_(w), h_(h) {
        os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
        os_ << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    }

    void comment(const std::string& text) { os_ << "<!-- " << text << " -->\n"; }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
        os_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2) << "\" y2=\"" << fmt(y2)
            << "\" stroke=\"" << stroke << "\" stroke-width=\"" << fmt(width) << "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
        os_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
            << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0) {
        os_ << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"" << fmt(r) << "\" fill=\"" << fill
            << "\" fill-opacity=\"" << fmt(opacity) << "\"/>\n";
    }

    void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                 const std::string& fill, double fill_opacity) {
        os_ << "<polygon points=\"";
        for (const auto& [x, y] : pts) os_ << fmt(x) << ',' << fmt(y) << ' ';
        os_ << "\" stroke=\"" << stroke << "\" fill=\"" << fill << "\" fill-opacity=\"" << fmt(fill_opacity)
            << "\" stroke-width=\"1.5\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 11, const std::string& anchor = "start",
              const std::string& fill = "#222222") {
        os_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-family=\"sans-serif\" font-size=\"" << size
            << "\" text-anchor=\"" << anchor << "\" fill=\"" << fill << "\">" << escape(s) << "</text>\n";
    }

    void save(const std::string& path) {
        os_ << "</svg>\n";
        std::ofstream out(path);
        if (!out) throw LoadError("svg: cannot open for write: " + path);
        out << os_.str();
        if (!out) throw LoadError("svg: write failed: " + path);
    }

private:
    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            if (c == '&')
                out += "&amp;";
            else if (c == '<')
                out += "&lt;";
            else if (c == '>')
                out += "&gt;";
            else
                out.push_back(c);
        }
        return out;
    }

    int w_, h_;
    std::ostringstream os_;
};

struct Panel {
    double x0, y0, w, h;
};

void draw_axes(Doc& doc, const Panel& p, const std::string& title) {
    doc.rect(p.x0, p.y0, p.w, p.h, "none", "#444444");
    doc.text(p.x0 + p.w / 2, p.y0 - 8, title, 13, "middle");
}

}  // namespace

void write_embedding_scatter(const std::vector<EmbeddingPoint>& points, const std::vector<std::string>& devices,
                             const std::string& path) {
    const int W = 980, H = 520;
    Doc doc(W, H);
    doc.comment("embedding scatter: one panel per plane, colored by device");

    std::map<std::string, int> color_of;
    for (size_t i = 0; i < devices.size(); ++i) color_of[devices[i]] = static_cast<int>(i % 10);

    const Panel panels[2] = {{60, 40, 380, 380}, {520, 40, 380, 380}};  // TC left, TV right
    const Plane order[2] = {Plane::TC, Plane::TV};
    for (int pi = 0; pi < 2; ++pi) {
        const Panel& panel = panels[pi];
        draw_axes(doc, panel, plane_name(order[pi]) + std::string(" plane"));
        // data bounds for this plane
        double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
        bool any = false;
        for (const auto& pt : points)
            if (pt.plane == order[pi]) {
                xmin = std::min(xmin, pt.x);
                xmax = std::max(xmax, pt.x);
                ymin = std::min(ymin, pt.y);
                ymax = std::max(ymax, pt.y);
                any = true;
            }
        if (!any) continue;
        if (xmax - xmin < 1e-9) xmax = xmin + 1.0;
        if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
        const double pad = 12.0;
        for (const auto& pt : points) {
            if (pt.plane != order[pi]) continue;
            const double px = panel.x0 + pad + (pt.x - xmin) / (xmax - xmin) * (panel.w - 2 * pad);
            const double py = panel.y0 + panel.h - pad - (pt.y - ymin) / (ymax - ymin) * (panel.h - 2 * pad);
            doc.circle(px, py, 3.2, kPalette[color_of[pt.device]], 0.8);
        }
    }
    // legend
    double lx = 60, ly = 455;
    for (const auto& dev : devices) {
        doc.circle(lx, ly - 4, 4.5, kPalette[color_of[dev]]);
        doc.text(lx + 10, ly, dev, 12);
        lx += 10 + 7.2 * static_cast<double>(dev.size()) + 28;
        if (lx > W - 120) {
            lx = 60;
            ly += 20;
        }
    }
    doc.save(path);
}

namespace {

// series key and ordering shared by both report charts
std::vector<std::string> series_keys(const DiceReport& report, std::map<std::string, std::map<std::string, double>>* table) {
    std::set<std::string> series;
    for (const auto& r : report.rows) {
        if (r.class_name == "mean" || r.class_name == "std") continue;
        const std::string key = r.test_set + "/" + r.arm;
        (*table)[r.class_name][key] = r.dice;
        series.insert(key);
    }
    return {series.begin(), series.end()};
}

}  // namespace

void write_dice_bar_chart(const DiceReport& report, const std::string& path) {
    std::map<std::string, std::map<std::string, double>> table;  // class -> series -> dice
    const auto series = series_keys(report, &table);

    const int W = 1040, H = 420;
    Doc doc(W, H);
    doc.comment("per-structure dice, grouped by class");
    const Panel panel{70, 30, 900, 300};
    draw_axes(doc, panel, "Dice per structure");
    for (int i = 0; i <= 5; ++i) {
        const double frac = i / 5.0;
        const double y = panel.y0 + panel.h - frac * panel.h;
        doc.line(panel.x0 - 4, y, panel.x0 + panel.w, y, "#dddddd");
        doc.text(panel.x0 - 8, y + 4, fmt(frac), 10, "end");
    }
    if (!table.empty()) {
        const double group_w = panel.w / static_cast<double>(table.size());
        const double bar_w = std::min(22.0, group_w * 0.8 / std::max<size_t>(1, series.size()));
        double gx = panel.x0;
        for (const auto& [cls, values] : table) {
            double bx = gx + (group_w - bar_w * static_cast<double>(series.size())) / 2.0;
            for (size_t s = 0; s < series.size(); ++s) {
                const auto it = values.find(series[s]);
                if (it != values.end()) {
                    const double hgt = std::clamp(it->second, 0.0, 1.0) * panel.h;
                    doc.rect(bx, panel.y0 + panel.h - hgt, bar_w, hgt, kPalette[s % 10]);
                }
                bx += bar_w;
            }
            doc.text(gx + group_w / 2, panel.y0 + panel.h + 14, cls, 9, "middle");
            gx += group_w;
        }
    }
    double lx = 70, ly = 395;
    for (size_t s = 0; s < series.size(); ++s) {
        doc.rect(lx, ly - 9, 10, 10, kPalette[s % 10]);
        doc.text(lx + 14, ly, series[s], 11);
        lx += 14 + 7.0 * static_cast<double>(series[s].size()) + 26;
    }
    doc.save(path);
}

void write_dice_radial_chart(const DiceReport& report, const std::string& path) {
    std::map<std::string, std::map<std::string, double>> table;
    const auto series = series_keys(report, &table);
    std::vector<std::string> axes;
    for (const auto& [cls, unused] : table) axes.push_back(cls);

    const int W = 620, H = 560;
    Doc doc(W, H);
    doc.comment("radial per-structure dice");
    const double cx = W / 2.0, cy = 270.0, radius = 200.0;
    doc.text(cx, 28, "Structure-wise Dice", 14, "middle");
    for (int ring = 1; ring <= 4; ++ring) doc.circle(cx, cy, radius * ring / 4.0, "none");
    for (int ring = 1; ring <= 4; ++ring) {
        std::vector<std::pair<double, double>> ringpts;
        for (int a = 0; a <= 48; ++a) {
            const double t = 2.0 * 3.14159265358979323846 * a / 48.0;
            ringpts.emplace_back(cx + radius * ring / 4.0 * std::cos(t), cy + radius * ring / 4.0 * std::sin(t));
        }
        doc.polygon(ringpts, "#dddddd", "none", 0.0);
    }
    const size_t na = axes.size();
    if (na >= 3) {
        auto angle_of = [na](size_t i) {
            return 2.0 * 3.14159265358979323846 * static_cast<double>(i) / static_cast<double>(na) -
                   3.14159265358979323846 / 2.0;
        };
        for (size_t i = 0; i < na; ++i) {
            const double t = angle_of(i);
            doc.line(cx, cy, cx + radius * std::cos(t), cy + radius * std::sin(t), "#cccccc");
            doc.text(cx + (radius + 16) * std::cos(t), cy + (radius + 16) * std::sin(t), axes[i], 9, "middle");
        }
        for (size_t s = 0; s < series.size(); ++s) {
            std::vector<std::pair<double, double>> poly;
            for (size_t i = 0; i < na; ++i) {
                const auto it = table[axes[i]].find(series[s]);
                const double v = it == table[axes[i]].end() ? 0.0 : std::clamp(it->second, 0.0, 1.0);
                const double t = angle_of(i);
                poly.emplace_back(cx + radius * v * std::cos(t), cy + radius * v * std::sin(t));
            }
            doc.polygon(poly, kPalette[s % 10], kPalette[s % 10], 0.12);
        }
    }
    double lx = 40, ly = 520;
    for (size_t s = 0; s < series.size(); ++s) {
        doc.rect(lx, ly - 9, 10, 10, kPalette[s % 10]);
        doc.text(lx + 14, ly, series[s], 11);
        lx += 14 + 7.0 * static_cast<double>(series[s].size()) + 26;
    }
    doc.save(path);
}

}  // namespace fetalseg::svg
