//! Bundled generator of plausible clean rosters.

use std::collections::HashSet;

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::PlainProfile;

const GIVEN: &[&str] = &[
    "aaron", "abigail", "adam", "adrian", "aidan", "aiden", "alana", "alexander", "alexandra",
    "alice", "alicia", "amber", "amelia", "amy", "andrew", "angus", "anna", "annabelle",
    "anthony", "archer", "ashley", "ava", "bailey", "benjamin", "blake", "bradley", "brandon",
    "brianna", "brodie", "brooke", "caitlin", "caleb", "callum", "cameron", "charlie", "charlotte",
    "chelsea", "chloe", "christopher", "claire", "connor", "courtney", "daniel", "darcy", "david",
    "declan", "dylan", "edward", "elijah", "elise", "elizabeth", "ella", "emily", "emma", "ethan",
    "eve", "ewan", "geoffrey", "georgia", "grace", "hamish", "hannah", "harrison", "harry",
    "hayden", "heidi", "holly", "hugo", "imogen", "isaac", "isabella", "isabelle", "jack",
    "jackson", "jacob", "jade", "jaden", "james", "jasmine", "jayden", "jessica", "joel",
    "jordan", "joshua", "kate", "kayla", "keira", "kiara", "kyle", "lachlan", "lara", "lauren",
    "layla", "leah", "liam", "lily", "lucas", "lucy", "luke", "madeline", "madison", "matilda",
    "matthew", "max", "maya", "mia", "michael", "mikayla", "mitchell", "molly", "nathan",
    "nicholas", "noah", "oliver", "olivia", "paige", "patrick", "peter", "phoebe", "rachel",
    "rebecca", "riley", "robert", "ruby", "ryan", "samantha", "samuel", "sarah", "sebastian",
    "sienna", "sophie", "stephanie", "tahlia", "taylor", "thomas", "tyler", "victoria",
    "william", "xavier", "zachary", "zara", "zoe", "mohammed", "fatima", "wei", "mei", "raj",
    "priya", "tariq", "amara", "kwame", "nia", "mateo", "lucia", "diego", "sofia", "yusuf",
];

const SURNAMES: &[&str] = &[
    "smith", "jones", "williams", "brown", "wilson", "taylor", "johnson", "white", "martin",
    "anderson", "thompson", "nguyen", "thomas", "walker", "harris", "lee", "ryan", "robinson",
    "kelly", "king", "davis", "wright", "evans", "roberts", "green", "hall", "wood", "jackson",
    "clarke", "patel", "khan", "lewis", "james", "phillips", "mitchell", "campbell", "young",
    "allen", "scott", "baker", "turner", "hill", "edwards", "cooper", "murphy", "ward", "morris",
    "moore", "clark", "parker", "collins", "richardson", "hughes", "stewart", "morgan", "bell",
    "watson", "cook", "bailey", "murray", "graham", "kennedy", "marshall", "mcdonald", "ross",
    "russell", "reid", "fraser", "hamilton", "gordon", "macdonald", "henderson", "mackenzie",
    "paterson", "johnston", "messier", "elliott", "seitz", "tremblay", "gagnon", "roy", "cote",
    "bouchard", "gauthier", "morin", "lavoie", "fortin", "gagne", "ouellet", "pelletier",
    "belanger", "levesque", "bergeron", "leblanc", "paquette", "girard", "simard", "boucher",
    "caron", "beaulieu", "cloutier", "dube", "poirier", "fournier", "lapointe", "leclerc",
    "lefebvre", "poulin", "thibault", "dufour", "mercier", "wang", "li", "zhang", "liu", "chen",
    "yang", "huang", "zhao", "wu", "zhou", "singh", "kaur", "sharma", "gill", "sandhu", "dhillon",
    "grewal", "garcia", "rodriguez", "martinez", "hernandez", "lopez", "gonzalez", "perez",
    "sanchez", "ramirez", "torres", "flores", "rivera", "gomez", "diaz", "reyes", "cruz",
    "morales", "ortiz", "gutierrez", "chavez", "ramos", "ruiz", "alvarez", "mendoza", "castillo",
    "jimenez", "moreno", "romero", "herrera", "medina", "aguilar", "vargas", "kowalski",
    "nowak", "wisniewski", "wojcik", "kowalczyk", "kaminski", "lewandowski", "zielinski",
    "schmidt", "schneider", "fischer", "weber", "meyer", "wagner", "becker", "schulz",
    "hoffmann", "koch", "richter", "klein", "wolf", "schroeder", "neumann", "braun", "zimmermann",
    "okafor", "adeyemi", "mensah", "osei", "abdi", "hassan", "ali", "ahmed", "ibrahim", "yusuf",
    "crowchild", "manyfingers", "bearspaw", "twoyoungmen", "eagletail", "runningrabbit",
];

const ONSETS: &[&str] = &[
    "b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h", "j", "k", "kr", "l", "m", "n", "p", "r",
    "s", "sh", "st", "t", "tr", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "y"];
const CODAS: &[&str] = &[
    "", "", "n", "r", "s", "l", "m", "t", "nd", "rs", "ck", "ll", "son", "ton", "ley", "man",
    "berg", "ski", "ez", "ova",
];

pub(crate) const YEAR_MIN: i32 = 1900;
pub(crate) const YEAR_MAX: i32 = 2025;

fn syllable_surname(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut name = String::new();
    for _ in 0..syllables {
        name.push_str(ONSETS.choose(rng).unwrap());
        name.push_str(VOWELS.choose(rng).unwrap());
    }
    name.push_str(CODAS.choose(rng).unwrap());
    name
}

fn random_dob(rng: &mut ChaCha8Rng) -> (u32, u32, i32) {
    let year = rng.random_range(1935..=2005);
    let month = rng.random_range(1..=12);
    loop {
        let day = rng.random_range(1..=31);
        if NaiveDate::from_ymd_opt(year, month, day).is_some() {
            return (day, month, year);
        }
    }
}

/// Generates `n` unique original profiles with ids `rec-<i>-org`.
///
/// Surnames are half drawn from a common-name list and half synthesized from
/// syllables, which keeps accidental full-name collisions rare.
pub fn bundled_roster(n: usize, seed: u64) -> Vec<PlainProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(4);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let first = GIVEN.choose(&mut rng).unwrap().to_string();
        let last = if rng.random_bool(0.5) {
            SURNAMES.choose(&mut rng).unwrap().to_string()
        } else {
            syllable_surname(&mut rng)
        };
        let (day, month, year) = random_dob(&mut rng);
        if !seen.insert((first.clone(), last.clone(), day, month, year)) {
            continue;
        }
        out.push(PlainProfile {
            profile_id: format!("rec-{:0width$}-org", out.len()),
            first_name: first,
            last_name: last,
            dob_day: day,
            dob_month: month,
            dob_year: year,
        });
    }
    out
}
