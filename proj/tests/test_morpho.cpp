#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>
#include <vector>

#include "atmil/dataset.hpp"
#include "atmil/morpho.hpp"
#include "atmil/rng.hpp"

using namespace atmil;

namespace {

// Union-find component counter: independent of the library's BFS fill.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
    for (int i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
  }
  int find(int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

int component_oracle(const std::vector<double>& pixels, int h, int w, int connectivity) {
  UnionFind uf(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (pixels[static_cast<size_t>(y) * w + x] <= 0.5) continue;
      auto link = [&](int ny, int nx) {
        if (ny >= 0 && ny < h && nx >= 0 && nx < w &&
            pixels[static_cast<size_t>(ny) * w + nx] > 0.5)
          uf.unite(y * w + x, ny * w + nx);
      };
      link(y, x + 1);
      link(y + 1, x);
      if (connectivity == 8) {
        link(y + 1, x + 1);
        link(y + 1, x - 1);
      }
    }
  std::set<int> roots;
  for (int i = 0; i < h * w; ++i)
    if (pixels[static_cast<size_t>(i)] > 0.5) roots.insert(uf.find(i));
  return static_cast<int>(roots.size());
}

}  // namespace

TEST_CASE("count_components") {
  SUBCASE("empty image has zero components") {
    std::vector<double> img(64, 0.0);
    CHECK(count_components(img, 8, 8, 4) == 0);
    CHECK(count_components(img, 8, 8, 8) == 0);
  }

  SUBCASE("diagonal neighbours merge under 8-connectivity only") {
    std::vector<double> img(16, 0.0);
    img[0] = 1.0;  // (0,0)
    img[5] = 1.0;  // (1,1)
    CHECK(count_components(img, 4, 4, 8) == 1);
    CHECK(count_components(img, 4, 4, 4) == 2);
  }

  SUBCASE("connectivity must be 4 or 8") {
    std::vector<double> img(16, 0.0);
    CHECK_THROWS_AS((void)count_components(img, 4, 4, 6), UsageError);
  }

  SUBCASE("200 random 16x16 grids match the union-find oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> img(256);
      double density = rng.uniform(0.1, 0.7);
      for (double& p : img) p = rng.bernoulli(density) ? 1.0 : 0.0;
      for (int conn : {4, 8}) {
        CAPTURE(trial);
        CAPTURE(conn);
        CHECK(count_components(img, 16, 16, conn) == component_oracle(img, 16, 16, conn));
      }
    }
  }

  SUBCASE("invariant under transposition and quarter rotation") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> img(14 * 10);
      for (double& p : img) p = rng.bernoulli(0.4) ? 1.0 : 0.0;
      std::vector<double> transposed(10 * 14), rotated(10 * 14);
      for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 10; ++x) {
          transposed[static_cast<size_t>(x) * 14 + y] = img[static_cast<size_t>(y) * 10 + x];
          rotated[static_cast<size_t>(x) * 14 + (13 - y)] = img[static_cast<size_t>(y) * 10 + x];
        }
      for (int conn : {4, 8}) {
        int base = count_components(img, 14, 10, conn);
        CHECK(count_components(transposed, 10, 14, conn) == base);
        CHECK(count_components(rotated, 10, 14, conn) == base);
      }
    }
  }
}

TEST_CASE("gen_stroke_digit") {
  SUBCASE("every seed yields one 8-connected component with a skeleton") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(seed);
      DigitImage img = gen_stroke_digit(rng);
      CAPTURE(seed);
      CHECK(count_components(img, 8) == 1);
      CHECK_FALSE(img.skeleton.empty());
      for (auto [y, x] : img.skeleton) CHECK(img.fg(y, x));
    }
  }

  SUBCASE("same seed reproduces the same image") {
    Rng a(42), b(42);
    DigitImage ia = gen_stroke_digit(a);
    DigitImage ib = gen_stroke_digit(b);
    CHECK(ia.pixels == ib.pixels);
    CHECK(ia.skeleton == ib.skeleton);
  }

  SUBCASE("1000 samples keep the foreground between 2% and 25%") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
      DigitImage img = gen_stroke_digit(rng);
      double fraction = img.foreground_count() / 784.0;
      CAPTURE(i);
      CHECK(fraction >= 0.02);
      CHECK(fraction <= 0.25);
    }
  }
}

TEST_CASE("perturb") {
  Rng base_rng(11);
  DigitImage base = gen_stroke_digit(base_rng);

  SUBCASE("healthy is the identity") {
    Rng rng(1);
    DigitImage out = perturb(base, PerturbClass::healthy, rng);
    CHECK(out.pixels == base.pixels);
  }

  SUBCASE("inactive fragments into at least two components") {
    // A stroke can refuse to split (heavily crossed figures); that surfaces
    // as a DataError per the retry contract and must stay rare.
    int failures = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
      Rng gen(seed + 100);
      DigitImage digit = gen_stroke_digit(gen);
      Rng rng(seed);
      CAPTURE(seed);
      try {
        DigitImage out = perturb(digit, PerturbClass::inactive, rng);
        CHECK(count_components(out, 8) >= 2);
        CHECK(out.foreground_count() > 0);
      } catch (const DataError&) {
        ++failures;
      }
    }
    CHECK(failures <= 1);
  }

  SUBCASE("focal and diffuse strictly add foreground") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      Rng gen(seed + 500);
      DigitImage digit = gen_stroke_digit(gen);
      Rng r1(seed), r2(seed);
      DigitImage focal = perturb(digit, PerturbClass::focal, r1);
      DigitImage diffuse = perturb(digit, PerturbClass::diffuse, r2);
      CAPTURE(seed);
      CHECK(focal.foreground_count() > digit.foreground_count());
      CHECK(diffuse.foreground_count() > digit.foreground_count());
    }
  }

  SUBCASE("thickness ordering healthy <= focal <= diffuse over 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Rng gen(seed + 900);
      DigitImage digit = gen_stroke_digit(gen);
      Rng r1(seed), r2(seed);
      int healthy = digit.foreground_count();
      int focal = perturb(digit, PerturbClass::focal, r1).foreground_count();
      int diffuse = perturb(digit, PerturbClass::diffuse, r2).foreground_count();
      CAPTURE(seed);
      CHECK(focal >= healthy);
      CHECK(diffuse >= focal);
    }
  }

  SUBCASE("a skeleton-free image only supports healthy") {
    DigitImage loaded;
    loaded.pixels.assign(784, 0.0);
    loaded.set(10, 10, 1.0);
    Rng rng(3);
    CHECK_NOTHROW((void)perturb(loaded, PerturbClass::healthy, rng));
    CHECK_THROWS_AS((void)perturb(loaded, PerturbClass::focal, rng), UsageError);
  }

  SUBCASE("an uncuttable image raises a data error") {
    // A solid block cannot be split by 3x3 hole punches along its skeleton.
    DigitImage solid;
    solid.pixels.assign(784, 1.0);
    for (int x = 4; x < 24; ++x) solid.skeleton.emplace_back(14, x);
    Rng rng(5);
    CHECK_THROWS_AS((void)perturb(solid, PerturbClass::inactive, rng), DataError);
  }
}

TEST_CASE("build_bag") {
  BagSpec spec;  // bag_size 100, binary, positives 1..10

  SUBCASE("negative bags never contain focal or diffuse instances") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Bag bag = build_bag_with_label(spec, 0, 0, rng);
      CHECK(bag.bag_label == 0);
      CHECK(bag.instances.size() == 100);
      bool any_positive = false;
      for (const Instance& inst : bag.instances) {
        const std::string& cls = inst.meta.at("class");
        any_positive = any_positive || cls == "focal" || cls == "diffuse";
      }
      CHECK_FALSE(any_positive);
    }
  }

  SUBCASE("positive bags contain between 1 and 10 positives") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Bag bag = build_bag_with_label(spec, 1, 0, rng);
      CHECK(bag.bag_label == 1);
      int positives = 0;
      for (const Instance& inst : bag.instances) {
        const std::string& cls = inst.meta.at("class");
        positives += (cls == "focal" || cls == "diffuse") ? 1 : 0;
      }
      CHECK(positives >= 1);
      CHECK(positives <= 10);
    }
  }

  SUBCASE("aux labels match a per-instance flood-fill oracle") {
    BagSpec small = spec;
    small.bag_size = 10;
    Rng rng(9);
    Bag bag = build_bag_with_label(small, 1, 0, rng);
    for (size_t i = 0; i < bag.instances.size(); ++i) {
      const Instance& inst = bag.instances[i];
      int components = component_oracle(inst.pixels, inst.height, inst.width, 8);
      CHECK(bag.aux_labels[i] == (components > 1 ? 1 : 0));
    }
  }

  SUBCASE("four-class bags are homogeneous") {
    BagSpec four = spec;
    four.scheme = LabelScheme::four_class;
    four.bag_size = 12;
    for (int label = 0; label < 4; ++label) {
      Rng rng(static_cast<uint64_t>(label));
      Bag bag = build_bag_with_label(four, label, 0, rng);
      CHECK(bag.bag_label == label);
      for (const Instance& inst : bag.instances)
        CHECK(inst.meta.at("class") == perturb_name(static_cast<PerturbClass>(label)));
    }
  }

  SUBCASE("impossible positive range is a configuration error") {
    BagSpec bad = spec;
    bad.bag_size = 5;
    bad.positive_max = 10;
    Rng rng(1);
    CHECK_THROWS_AS((void)build_bag_with_label(bad, 1, 0, rng), ConfigError);
  }

  SUBCASE("build_bag with the same generator state reproduces the bag") {
    Rng a(123), b(123);
    BagSpec small = spec;
    small.bag_size = 6;
    small.positive_max = 2;
    Bag ba = build_bag(small, a);
    Bag bb = build_bag(small, b);
    CHECK(ba.bag_label == bb.bag_label);
    REQUIRE(ba.instances.size() == bb.instances.size());
    for (size_t i = 0; i < ba.instances.size(); ++i)
      CHECK(ba.instances[i].pixels == bb.instances[i].pixels);
  }
}

TEST_CASE("dataset generation") {
  DatasetManifest manifest;
  manifest.seed = 2024;
  manifest.spec.bag_size = 8;
  manifest.spec.positive_max = 3;
  manifest.splits = {{"train", 12}, {"val", 4}, {"test", 6}};

  SUBCASE("regeneration is bit-identical") {
    std::vector<Bag> a = generate_split(manifest, "train");
    std::vector<Bag> b = generate_split(manifest, "train");
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].bag_label == b[i].bag_label);
      for (size_t j = 0; j < a[i].instances.size(); ++j)
        CHECK(a[i].instances[j].pixels == b[i].instances[j].pixels);
    }
  }

  SUBCASE("a larger train split extends the smaller one bag-for-bag") {
    DatasetManifest big = manifest;
    big.splits = {{"train", 24}};
    std::vector<Bag> small_bags = generate_split(manifest, "train");
    std::vector<Bag> big_bags = generate_split(big, "train");
    for (size_t i = 0; i < small_bags.size(); ++i) {
      CHECK(big_bags[i].id == small_bags[i].id);
      for (size_t j = 0; j < small_bags[i].instances.size(); ++j)
        CHECK(big_bags[i].instances[j].pixels == small_bags[i].instances[j].pixels);
    }
  }

  SUBCASE("bag ids are disjoint across splits and labels balanced") {
    std::set<int> ids;
    int positives = 0, total = 0;
    for (const char* split : {"train", "val", "test"}) {
      for (const Bag& bag : generate_split(manifest, split)) {
        CHECK(ids.insert(bag.id).second);
        positives += bag.bag_label;
        ++total;
      }
    }
    CHECK(total == 22);
    CHECK(positives == 11);
  }

  SUBCASE("manifest and archive round-trip through disk") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "atmil_morpho_test";
    fs::create_directories(dir);

    write_manifest(manifest, (dir / "manifest.txt").string());
    DatasetManifest loaded = read_manifest((dir / "manifest.txt").string());
    CHECK(loaded.seed == manifest.seed);
    CHECK(loaded.spec.bag_size == manifest.spec.bag_size);
    REQUIRE(loaded.splits.size() == 3);
    CHECK(loaded.splits[0].name == "train");
    CHECK(loaded.splits[0].bags == 12);

    std::vector<Bag> bags = generate_split(manifest, "val");
    write_bags(bags, (dir / "val.bags").string());
    std::vector<Bag> back = read_bags((dir / "val.bags").string());
    REQUIRE(back.size() == bags.size());
    for (size_t i = 0; i < bags.size(); ++i) {
      CHECK(back[i].id == bags[i].id);
      CHECK(back[i].bag_label == bags[i].bag_label);
      CHECK(back[i].aux_labels == bags[i].aux_labels);
      for (size_t j = 0; j < bags[i].instances.size(); ++j) {
        CHECK(back[i].instances[j].pixels == bags[i].instances[j].pixels);
        CHECK(back[i].instances[j].meta == bags[i].instances[j].meta);
      }
    }
    fs::remove_all(dir);
  }

  SUBCASE("unknown manifest keys are format errors") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "atmil_morpho_test2";
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "bad.txt");
      out << "atmil-dataset 1\nseed 5\nfrobnicate 3\n";
    }
    CHECK_THROWS_AS((void)read_manifest((dir / "bad.txt").string()), FormatError);
    fs::remove_all(dir);
  }
}

TEST_CASE("positive and negative bags encode the standard assumption") {
  BagSpec spec;
  spec.bag_size = 20;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    int label = static_cast<int>(seed % 2);
    Bag bag = build_bag_with_label(spec, label, 0, rng);
    bool any_positive = false;
    for (const Instance& inst : bag.instances) {
      const std::string& cls = inst.meta.at("class");
      any_positive = any_positive || cls == "focal" || cls == "diffuse";
    }
    CHECK(any_positive == (label == 1));
  }
}
