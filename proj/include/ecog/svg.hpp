#ifndef ECOG_SVG_HPP
#define ECOG_SVG_HPP

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace ecog {

// Minimal dependency-free SVG writer for line and scatter plots. Output is
// deterministic byte-for-byte for identical inputs.
class SvgPlot {
public:
    SvgPlot(int width = 720, int height = 480, std::string title = "")
        : width_(width), height_(height), title_(std::move(title)) {}

    void add_line(const std::vector<double>& xs, const std::vector<double>& ys,
                  const std::string& color) {
        series_.push_back({xs, ys, color, false, 0});
        extend_bounds(xs, ys);
    }

    // glyph: 0 = circle, 1 = square, 2 = triangle
    void add_scatter(const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& color, int glyph = 0) {
        series_.push_back({xs, ys, color, true, glyph});
        extend_bounds(xs, ys);
    }

    void write(const std::string& path) const {
        std::ofstream f(path);
        double xr = xmax_ > xmin_ ? xmax_ - xmin_ : 1.0;
        double yr = ymax_ > ymin_ ? ymax_ - ymin_ : 1.0;
        const double ml = 50, mr = 15, mt = title_.empty() ? 15 : 35, mb = 35;
        double pw = width_ - ml - mr, ph = height_ - mt - mb;
        auto px = [&](double x) { return ml + (x - xmin_) / xr * pw; };
        auto py = [&](double y) { return mt + ph - (y - ymin_) / yr * ph; };

        f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
          << height_ << "\">\n";
        f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        if (!title_.empty())
            f << "<text x=\"" << width_ / 2 << "\" y=\"20\" text-anchor=\"middle\" "
              << "font-family=\"sans-serif\" font-size=\"14\">" << title_ << "</text>\n";
        f << num("<rect x=\"%g\" y=\"%g\"", ml, mt) << num(" width=\"%g\" height=\"%g\"", pw, ph)
          << " fill=\"none\" stroke=\"#888\"/>\n";
        for (const auto& s : series_) {
            if (s.scatter) {
                for (std::size_t i = 0; i < s.xs.size(); ++i) {
                    double x = px(s.xs[i]), y = py(s.ys[i]);
                    if (s.glyph == 0)
                        f << num("<circle cx=\"%g\" cy=\"%g\"", x, y) << " r=\"3\" fill=\""
                          << s.color << "\"/>\n";
                    else if (s.glyph == 1)
                        f << num("<rect x=\"%g\" y=\"%g\"", x - 3, y - 3)
                          << " width=\"6\" height=\"6\" fill=\"" << s.color << "\"/>\n";
                    else
                        f << num("<path d=\"M %g %g", x, y - 4) << num(" L %g %g", x - 4, y + 3)
                          << num(" L %g %g", x + 4, y + 3) << " Z\" fill=\"" << s.color
                          << "\"/>\n";
                }
            } else {
                f << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
                for (std::size_t i = 0; i < s.xs.size(); ++i)
                    f << num("%g,%g ", px(s.xs[i]), py(s.ys[i]));
                f << "\"/>\n";
            }
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4g .. %.4g", xmin_, xmax_);
        f << "<text x=\"" << width_ / 2 << "\" y=\"" << height_ - 10
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << buf
          << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.4g .. %.4g", ymin_, ymax_);
        f << "<text x=\"12\" y=\"" << height_ / 2
          << "\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 "
          << height_ / 2 << ")\" text-anchor=\"middle\">" << buf << "</text>\n";
        f << "</svg>\n";
    }

private:
    struct Series {
        std::vector<double> xs, ys;
        std::string color;
        bool scatter = false;
        int glyph = 0;
    };

    static std::string num(const char* fmt, double a, double b) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), fmt, a, b);
        return buf;
    }

    void extend_bounds(const std::vector<double>& xs, const std::vector<double>& ys) {
        for (double x : xs) {
            xmin_ = std::min(xmin_, x);
            xmax_ = std::max(xmax_, x);
        }
        for (double y : ys) {
            ymin_ = std::min(ymin_, y);
            ymax_ = std::max(ymax_, y);
        }
    }

    int width_, height_;
    std::string title_;
    std::vector<Series> series_;
    double xmin_ = 1e300, xmax_ = -1e300, ymin_ = 1e300, ymax_ = -1e300;
};

}  // namespace ecog

#endif
