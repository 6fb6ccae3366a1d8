#include "cbrs/synth.hpp"

#include <cmath>
#include <set>

#include "cbrs/error.hpp"

namespace cbrs::synth {

namespace {

using Words = std::vector<std::string>;

const Words kGroups = {"A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-"};
const Words kGroupsLoose = {"A+", "B+", "O+", "AB+", "A-", "B-", "O-", "AB-", "A+ve", "B+ve", "O+ve", "O positive",
                            "B negative", "AB+ve"};
const Words kHospitals = {"Dhaka Medical College Hospital", "Square Hospital", "Evercare Hospital",
                          "Chittagong Medical College Hospital", "Popular Medical College Hospital",
                          "Ibn Sina Hospital", "Labaid Hospital", "Rajshahi Medical College Hospital",
                          "Sylhet MAG Osmani Medical College Hospital", "United Hospital", "Green Life Hospital",
                          "Holy Family Red Crescent Hospital"};
const Words kHospitalsBn = {"ঢাকা মেডিকেল কলেজ হাসপাতাল", "স্কয়ার হাসপাতাল", "পপুলার হাসপাতাল",
                            "চট্টগ্রাম মেডিকেল কলেজ হাসপাতাল", "ইবনে সিনা হাসপাতাল", "ল্যাবএইড হাসপাতাল"};
const Words kCities = {"Dhaka", "Chittagong", "Sylhet", "Rajshahi", "Khulna", "Barisal", "Mirpur", "Dhanmondi",
                       "Uttara", "Mohakhali", "Gazipur", "Narayanganj"};
const Words kCitiesBn = {"ঢাকা", "চট্টগ্রাম", "সিলেট", "রাজশাহী", "খুলনা", "মিরপুর", "ধানমন্ডি", "উত্তরা"};
const Words kConditions = {"thalassemia", "dengue", "surgery", "accident", "cesarean", "cancer", "anemia",
                           "heart surgery", "kidney dialysis", "delivery"};
const Words kConditionsBn = {"থ্যালাসেমিয়া", "ডেঙ্গু", "অপারেশন", "দুর্ঘটনা", "সিজার", "ক্যান্সার"};
const Words kNames = {"Rahim", "Karim", "Nusrat", "Tanvir", "Farhana", "Sadia", "Imran", "Mitu", "Arif", "Jannat",
                      "Sabbir", "Rafi", "Anika", "Tasnim", "Mahin", "Shakil", "Rupa", "Nabil", "Sumaiya", "Fahim"};
const Words kDays = {"today", "tomorrow", "tonight", "this morning", "by Friday", "on Sunday", "within 2 days"};
const Words kDaysTbn = {"ajke", "kalke", "aaj raate", "ekhoni", "porshu"};
const Words kDaysBn = {"আজ", "আগামীকাল", "আজ রাতে", "এখনই"};
const Words kFoods = {"biryani", "pizza", "tea", "coffee", "fuchka", "khichuri", "burger", "mango juice"};
const Words kTopics = {"the cricket match", "the exam routine", "the group tour", "the new phone", "the football final",
                       "the weekend plan", "the math assignment", "the wedding", "the movie", "the office party"};
const Words kTopicsTbn = {"exam", "khela", "tour", "class", "assignment", "biye", "cinema", "party"};
const Words kTopicsBn = {"পরীক্ষা", "খেলা", "ভ্রমণ", "ক্লাস", "বিয়ে", "সিনেমা", "দাওয়াত"};

std::string phone(Rng& rng) {
  static const Words prefixes = {"017", "018", "019", "015", "016", "013"};
  std::string p = rng.pick(prefixes);
  for (int i = 0; i < 8; ++i) p += static_cast<char>('0' + rng.below(10));
  if (rng.below(4) == 0) p = "+88" + p;
  return p;
}

std::string number(Rng& rng, int lo, int hi) { return std::to_string(lo + static_cast<int>(rng.below(hi - lo + 1))); }

// Replaces {key} slots; unknown keys throw.
std::string fill(std::string tpl, Rng& rng) {
  std::string out;
  size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] != '{') {
      out += tpl[i++];
      continue;
    }
    const size_t close = tpl.find('}', i);
    const std::string key = tpl.substr(i + 1, close - i - 1);
    i = close + 1;
    if (key == "bg") out += rng.pick(kGroups);
    else if (key == "bgx") out += rng.pick(kGroupsLoose);
    else if (key == "hosp") out += rng.pick(kHospitals);
    else if (key == "hosp_bn") out += rng.pick(kHospitalsBn);
    else if (key == "city") out += rng.pick(kCities);
    else if (key == "city_bn") out += rng.pick(kCitiesBn);
    else if (key == "cond") out += rng.pick(kConditions);
    else if (key == "cond_bn") out += rng.pick(kConditionsBn);
    else if (key == "name") out += rng.pick(kNames);
    else if (key == "day") out += rng.pick(kDays);
    else if (key == "day_tbn") out += rng.pick(kDaysTbn);
    else if (key == "day_bn") out += rng.pick(kDaysBn);
    else if (key == "phone") out += phone(rng);
    else if (key == "bags") out += number(rng, 1, 4);
    else if (key == "age") out += number(rng, 3, 70);
    else if (key == "hour") out += number(rng, 1, 11);
    else if (key == "food") out += rng.pick(kFoods);
    else if (key == "topic") out += rng.pick(kTopics);
    else if (key == "topic_tbn") out += rng.pick(kTopicsTbn);
    else if (key == "topic_bn") out += rng.pick(kTopicsBn);
    else if (key == "n") out += number(rng, 2, 40);
    else throw Error("unknown template slot: " + key);
  }
  return out;
}

struct Template {
  Language language;
  std::string text;
};

Message from(const std::vector<Template>& templates, Rng& rng, int label, std::string kind) {
  const auto& t = rng.pick(templates);
  return {fill(t.text, rng), label, t.language, std::move(kind)};
}

const std::vector<Template> kRequests = {
    {Language::en, "Urgent {bg} blood needed for a {cond} patient at {hosp}, {city}. {bags} bags required. Contact {phone}"},
    {Language::en, "Need {bags} bags of {bg} blood {day} at {hosp}. Please call {phone}"},
    {Language::en, "Emergency! {bgx} blood required {day} for my {cond} patient ({age} years) at {hosp}. Call {phone}"},
    {Language::en, "Blood needed: {bg}, {bags} unit, {hosp}, {city}. Patient: {name}. Contact: {phone}"},
    {Language::en, "Please help, my father needs {bgx} blood for {cond} at {hosp} {day}. {phone}"},
    {Language::en, "Looking for {bg} donor {day}, {bags} bag needed at {hosp} {city}. Transport will be provided. {phone}"},
    {Language::en, "{bgx} blood lagbe urgently at {hosp}, {bags} bags. Contact {name} {phone}"},
    {Language::tbn, "{bgx} rokto lagbe {day_tbn}, {hosp} e. Jogajog: {phone}"},
    {Language::tbn, "Joruri, {bg} rokto dorkar {bags} bag, rogi {cond} e bhugche, {hosp}. {phone}"},
    {Language::tbn, "{bags} bag {bgx} rokto lagbe {day_tbn} {city} te, {hosp}. Please keu thakle call din {phone}"},
    {Language::tbn, "Amar ammur jonno {bg} rokto dorkar {day_tbn}, {cond} operation. {hosp}, {city}. {phone}"},
    {Language::bn, "জরুরি {bg} রক্ত প্রয়োজন, {hosp_bn}, {city_bn}। {bags} ব্যাগ। যোগাযোগ: {phone}"},
    {Language::bn, "{day_bn} {bg} রক্ত লাগবে {bags} ব্যাগ, রোগী {cond_bn}, {hosp_bn}। ফোন {phone}"},
    {Language::bn, "একজন {cond_bn} রোগীর জন্য {bg} রক্ত দরকার {day_bn}। {hosp_bn}, {city_bn}। {phone}"},
    {Language::en, "Thanks in advance, {name} needs a {bg} donor at {hosp} {day}. {phone}"},
    {Language::en, "{bg} {day}, {hosp}. {phone}"},
    {Language::en, "Anyone {bg}? {name} at {hosp} {city}, please inbox"},
    {Language::tbn, "{bg} keu ache? {hosp}, {name} er jonno. {phone}"},
    {Language::bn, "{bg} কেউ আছেন? {hosp_bn}। {phone}"},
};

const std::vector<Template> kChat = {
    {Language::en, "lunch at {hour}?"},
    {Language::en, "Anyone up for {food} after class?"},
    {Language::en, "Did anyone watch {topic} yesterday?"},
    {Language::en, "Happy birthday {name}! Have a great year"},
    {Language::en, "Reminder: meeting about {topic} at {hour} pm"},
    {Language::en, "Can someone share the notes on {topic}? Thanks"},
    {Language::en, "{name}, are you coming to {topic} on {city} side?"},
    {Language::en, "The bus to {city} leaves at {hour}, don't be late"},
    {Language::en, "Who has a charger I can borrow for {n} minutes?"},
    {Language::tbn, "ajke {topic_tbn} hobe naki? {name} ke jiggesh kor"},
    {Language::tbn, "kal {city} te dekha hobe, {food} khabo"},
    {Language::tbn, "bhai {topic_tbn} er update ta den please"},
    {Language::tbn, "{name} tor {topic_tbn} kemon holo?"},
    {Language::bn, "আজকে {topic_bn} কখন শুরু হবে?"},
    {Language::bn, "{name} ভাই, {city_bn} যাওয়ার বাস কয়টায়?"},
    {Language::bn, "সবাইকে ঈদ মোবারক! {name}"},
    {Language::bn, "{topic_bn} নিয়ে কাল কথা হবে, {n} জন আসবে"},
};

const std::vector<Template> kAppreciation = {
    {Language::en, "We are very grateful to {name} for donating {bg} blood at {hosp} {day}. Thank you!"},
    {Language::en, "Thanks to everyone who helped, {name} donated {bg} blood and the {cond} patient is stable now."},
    {Language::en, "Update: blood managed for the patient at {hosp}. Thanks {name} for the quick {bg} donation."},
    {Language::tbn, "{name} bhai ke onek dhonnobad {bg} rokto deyar jonno, {hosp} e rogi ekhon valo ache"},
    {Language::bn, "{name} ভাইকে অনেক ধন্যবাদ {bg} রক্ত দেওয়ার জন্য। রোগী এখন ভালো আছে।"},
};

const std::vector<Template> kOffer = {
    {Language::en, "I am {bg}, last donated {n} weeks ago. Willing to donate in {city} if anyone needs."},
    {Language::en, "My blood group is {bg}. Please add me to the donor list for {city}."},
    {Language::tbn, "amar blood group {bg}, {city} te thaki, dorkar hole amake call diyen"},
    {Language::bn, "আমার রক্তের গ্রুপ {bg}, {city_bn} এ থাকি। প্রয়োজনে রক্ত দিতে রাজি আছি।"},
};

const std::vector<Template> kAdversarial = {
    {Language::en, "Free blood pressure and sugar check camp at {hosp} {day}. Urgent registration needed."},
    {Language::en, "Blood test report is ready at {hosp}, collect it before {hour} pm."},
    {Language::en, "Urgent: the {topic} is postponed, contact {name} at {phone} for details."},
    {Language::en, "Documentary on blood donation awareness at {city} hall, entry free."},
    {Language::tbn, "blood test korate {hosp} e jete hobe {day_tbn}, line onek boro"},
    {Language::bn, "{hosp_bn} এ বিনামূল্যে রক্তচাপ পরীক্ষা ক্যাম্প {day_bn}।"},
};

Corpus assemble(std::vector<Message> (*make)(size_t, size_t, Rng&), size_t size, size_t positives, uint64_t seed,
                const std::string& source) {
  Rng rng(seed);
  Corpus c;
  c.provenance = source;
  for (auto& m : make(size, positives, rng))
    c.samples.push_back({std::move(m.text), m.label, m.language, source});
  return c;
}

// Draws messages of one kind until `count` distinct normalized texts exist.
void draw_unique(std::vector<Message>& out, std::set<uint64_t>& seen, size_t count, Rng& rng,
                 Message (*make)(Rng&)) {
  size_t attempts = 0;
  for (size_t made = 0; made < count;) {
    if (++attempts > count * 1000 + 1000) throw Error("synthetic generator ran out of distinct texts");
    auto m = make(rng);
    if (!seen.insert(normalized_text_hash(m.text)).second) continue;
    out.push_back(std::move(m));
    ++made;
  }
}

std::vector<Message> make_imbalanced(size_t size, size_t positives, Rng& rng) {
  std::vector<Message> out;
  std::set<uint64_t> seen;
  const size_t negatives = size - positives;
  const size_t hard = negatives * 3 / 20;
  draw_unique(out, seen, positives, rng, request);
  draw_unique(out, seen, hard / 3, rng, appreciation);
  draw_unique(out, seen, hard / 3, rng, offer);
  draw_unique(out, seen, hard - 2 * (hard / 3), rng, adversarial);
  draw_unique(out, seen, negatives - hard, rng, chat);
  rng.shuffle(out);
  return out;
}

std::vector<Message> make_separable(size_t size, size_t positives, Rng& rng) {
  std::vector<Message> out;
  std::set<uint64_t> seen;
  draw_unique(out, seen, positives, rng, request);
  draw_unique(out, seen, size - positives, rng, chat);
  rng.shuffle(out);
  return out;
}

}  // namespace

Message request(Rng& rng) { return from(kRequests, rng, 1, "request"); }
Message chat(Rng& rng) { return from(kChat, rng, 0, "chat"); }
Message appreciation(Rng& rng) { return from(kAppreciation, rng, 0, "appreciation"); }
Message offer(Rng& rng) { return from(kOffer, rng, 0, "offer"); }
Message adversarial(Rng& rng) { return from(kAdversarial, rng, 0, "adversarial"); }

Corpus imbalanced(size_t size, double positive_rate, uint64_t seed) {
  if (positive_rate < 0.0 || positive_rate > 1.0) throw Error("positive_rate must be within [0, 1]");
  const auto positives = static_cast<size_t>(std::llround(static_cast<double>(size) * positive_rate));
  return assemble(make_imbalanced, size, positives, seed, "synthetic-imbalanced");
}

Corpus separable(size_t size, double positive_rate, uint64_t seed) {
  if (positive_rate < 0.0 || positive_rate > 1.0) throw Error("positive_rate must be within [0, 1]");
  const auto positives = static_cast<size_t>(std::llround(static_cast<double>(size) * positive_rate));
  return assemble(make_separable, size, positives, seed, "synthetic-separable");
}

Corpus stream(size_t size, size_t requests, uint64_t seed) {
  if (requests > size) throw Error("more requests than messages");
  return assemble(make_separable, size, requests, seed, "synthetic-stream");
}

}  // namespace cbrs::synth
