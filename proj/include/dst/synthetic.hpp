// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic restaurant-domain corpus: three goal slots with three values
// each, a nine-row database, and short system/user dialogues whose goal labels
// carry forward. Used for overfit checks and CLI smoke runs.
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dst/data.hpp"
#include "dst/features.hpp"
#include "dst/random.hpp"

namespace dst {

struct SyntheticCorpus {
  std::vector<Dialogue> dialogues;
  Ontology ontology;
  Database db;
};

namespace detail {

inline const std::array<std::array<std::string, 3>, kGoalSlots>& synthetic_values() {
  static const std::array<std::array<std::string, 3>, kGoalSlots> v = {{
      {"indian", "chinese", "italian"},
      {"north", "south", "west"},
      {"cheap", "moderate", "expensive"},
  }};
  return v;
}

inline Database synthetic_database() {
  const std::vector<DatabaseRecord> rows = {
      {{"indian heaven", "indian", "moderate", "north", "01223 350688", "12 north road"}},
      {{"curry garden", "indian", "expensive", "south", "01223 302330", "106 regent street"}},
      {{"kohinoor", "indian", "cheap", "west", "01223 323639", "74 mill road city centre"}},
      {{"golden wok", "chinese", "moderate", "north", "01223 350688", "191 histon road"}},
      {{"yu garden", "chinese", "expensive", "south", "01223 248882", "529 newmarket road"}},
      {{"rice house", "chinese", "cheap", "west", "01223 367755", "88 mill road"}},
      {{"pizza express", "italian", "moderate", "west", "01223 324033", "regent street"}},
      {{"da vinci pizzeria", "italian", "cheap", "north", "01223 351707", "20 milton road"}},
      {{"frankie and bennys", "italian", "expensive", "south", "01223 412430", "cambridge leisure park"}},
  };
  return Database(rows);
}

inline std::vector<std::string> words_of(const std::string& s) { return tokenize(s); }

}  // namespace detail

/// Generates `n_dialogues` dialogues deterministically from `seed`.
inline SyntheticCorpus micro_corpus(std::size_t n_dialogues = 20, std::uint64_t seed = 7) {
  const auto& values = detail::synthetic_values();
  SyntheticCorpus c;
  c.db = detail::synthetic_database();
  for (std::size_t s = 0; s < kGoalSlots; ++s)
    c.ontology.values[s].assign(values[s].begin(), values[s].end());

  static const std::array<std::string, kGoalSlots> questions = {
      "what kind of food would you like", "what part of town do you have in mind",
      "would you like something in the cheap moderate or expensive price range"};
  const auto inform = [&](std::size_t slot, const std::string& v, Rng& rng) -> std::string {
    static const std::array<std::array<std::string, 3>, kGoalSlots> templates = {{
        {"i want {} food", "{}", "i'm looking for {} food"},
        {"{} part of town", "the {}", "in the {} please"},
        {"{} please", "a {} restaurant", "{} price range"},
    }};
    std::string t = templates[slot][rng.below(3)];
    t.replace(t.find("{}"), 2, v);
    return t;
  };

  Rng rng(seed);
  for (std::size_t i = 0; i < n_dialogues; ++i) {
    Dialogue d;
    d.id = "synth-" + std::to_string(i);
    GoalState goal;
    std::array<std::string, kGoalSlots> target;
    for (std::size_t s = 0; s < kGoalSlots; ++s) {
      target[s] = rng.below(6) == 0 ? std::string(kDontcare) : values[s][rng.below(3)];
    }
    // Slot order in which the user reveals the goal.
    std::vector<std::size_t> order = {0, 1, 2};
    rng.shuffle(order);

    Turn first;
    first.turn_index = 0;
    first.system_words =
        detail::words_of("hello , welcome to the cambridge restaurant system . how may i help you ?");
    if (rng.bernoulli(0.5)) {
      const std::size_t s = order.front();
      order.erase(order.begin());
      first.user_words = detail::words_of(
          target[s] == kDontcare ? "i need a restaurant" : "i need a restaurant " + inform(s, target[s], rng));
      if (target[s] != kDontcare) goal.values[s] = target[s];
    } else {
      first.user_words = detail::words_of("hi i am looking for a restaurant");
    }
    first.gold = goal;
    d.turns.push_back(first);

    for (std::size_t s : order) {
      Turn t;
      t.turn_index = d.turns.size();
      t.system_words = detail::words_of(questions[s]);
      if (target[s] == kDontcare) {
        t.user_words = detail::words_of(rng.bernoulli(0.5) ? "i don't care" : "any");
      } else {
        t.user_words = detail::words_of((rng.bernoulli(0.3) ? "uh " : "") + inform(s, target[s], rng));
      }
      goal.values[s] = target[s];
      t.gold = goal;
      d.turns.push_back(t);
    }

    // Occasional change of mind about the food.
    if (rng.bernoulli(0.3)) {
      std::size_t cur = 3;
      for (std::size_t j = 0; j < 3; ++j)
        if (values[0][j] == goal.values[0]) cur = j;
      const std::string other = values[0][cur == 3 ? rng.below(3) : (cur + 1 + rng.below(2)) % 3];
      Turn t;
      t.turn_index = d.turns.size();
      t.system_words = detail::words_of("is there anything else");
      t.user_words = detail::words_of("actually i want " + other + " food");
      goal.values[0] = other;
      t.gold = goal;
      d.turns.push_back(t);
    }

    Turn last;
    last.turn_index = d.turns.size();
    const auto& row = c.db.rows()[rng.below(c.db.rows().size())];
    last.system_words = detail::words_of(row.cells[0] + " is a nice place in the " + row.cells[3] +
                                         " of town serving tasty " + row.cells[1] + " food");
    last.user_words = detail::words_of("thank you goodbye");
    last.gold = goal;
    d.turns.push_back(last);
    c.dialogues.push_back(std::move(d));
  }
  return c;
}

/// Writes the corpus in DSTC2 layout under `root`: data/<id>/{log,label}.json,
/// db.json, ontology_dstc2.json and three file lists. All dialogues go to
/// train; dev and test lists name the first and last quarter respectively.
inline void write_corpus(const SyntheticCorpus& c, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "data");
  std::vector<std::string> ids;
  for (const auto& d : c.dialogues) {
    write_dstc2_call(root / "data" / d.id, d);
    ids.push_back("data/" + d.id);
  }
  const std::size_t q = std::max<std::size_t>(ids.size() / 4, 1);
  write_file_list(root / "dstc2_train.flist", ids);
  write_file_list(root / "dstc2_dev.flist", {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(q, ids.size()))});
  write_file_list(root / "dstc2_test.flist", {ids.end() - static_cast<std::ptrdiff_t>(std::min(q, ids.size())), ids.end()});
  std::ofstream(root / "db.json") << c.db.to_json().dump(2) << '\n';
  std::ofstream(root / "ontology_dstc2.json") << c.ontology.to_json().dump(2) << '\n';
}

}  // namespace dst
