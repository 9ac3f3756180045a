//! Built-in object templates and instruction rules.

use serde::{Deserialize, Serialize};

use crate::geom::{Quat, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Cylinder,
    Ellipsoid,
}

/// Per-part Gaussian appearance. Parts differ in Gaussian anisotropy,
/// orientation and colour, which is what lets a per-point encoder tell
/// them apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStyle {
    /// Log of the per-axis scale relative to the template's base size.
    pub log_scale: Vec3,
    pub orientation: Quat,
    pub color: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartTemplate {
    pub name: String,
    pub affordance: String,
    pub shape: Shape,
    /// Centre in the object frame (z up, base on z = 0).
    pub center: Vec3,
    pub half_extents: Vec3,
    pub count: usize,
    pub style: GaussianStyle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    /// Object category.
    pub name: String,
    pub parts: Vec<PartTemplate>,
}

impl ObjectTemplate {
    pub fn num_primitives(&self) -> usize {
        self.parts.iter().map(|p| p.count).sum()
    }

    /// Primitive index range of every part, in part order.
    pub fn part_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|p| {
                let r = start..start + p.count;
                start += p.count;
                r
            })
            .collect()
    }

    pub fn part_index(&self, affordance: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.affordance == affordance)
    }

    /// Typical Gaussian size: 6% of the largest part half-extent.
    pub fn base_size(&self) -> f64 {
        0.06 * self
            .parts
            .iter()
            .flat_map(|p| p.half_extents)
            .fold(0.0, f64::max)
    }
}

type PartRow = (&'static str, &'static str, Shape, Vec3, Vec3, usize);

use Shape::{Box as Bx, Cylinder as Cy, Ellipsoid as El};

const TEMPLATES: &[(&str, &[PartRow])] = &[
    ("microwave", &[
        ("door", "open", Bx, [0.0, -0.19, 0.17], [0.2, 0.012, 0.13], 90),
        ("cavity", "contain", Bx, [0.0, 0.0, 0.17], [0.22, 0.17, 0.15], 150),
        ("button", "press", Bx, [0.26, -0.19, 0.17], [0.035, 0.012, 0.11], 40),
    ]),
    ("bowl", &[
        ("body", "wrap_grasp", El, [0.0, 0.0, 0.08], [0.16, 0.16, 0.08], 140),
        ("inside", "contain", Cy, [0.0, 0.0, 0.12], [0.12, 0.12, 0.03], 80),
    ]),
    ("mug", &[
        ("handle", "grasp", El, [0.11, 0.0, 0.1], [0.035, 0.015, 0.06], 70),
        ("body", "contain", Cy, [0.0, 0.0, 0.1], [0.07, 0.07, 0.1], 160),
    ]),
    ("bottle", &[
        ("body", "wrap_grasp", Cy, [0.0, 0.0, 0.14], [0.06, 0.06, 0.14], 150),
        ("cap", "open", Cy, [0.0, 0.0, 0.37], [0.025, 0.025, 0.025], 40),
        ("neck", "pour", Cy, [0.0, 0.0, 0.31], [0.03, 0.03, 0.035], 50),
    ]),
    ("knife", &[
        ("handle", "grasp", Bx, [-0.1, 0.0, 0.015], [0.07, 0.015, 0.012], 100),
        ("blade", "cut", Bx, [0.08, 0.0, 0.015], [0.11, 0.022, 0.004], 120),
    ]),
    ("scissors", &[
        ("handles", "grasp", El, [-0.06, 0.0, 0.01], [0.05, 0.05, 0.01], 110),
        ("blades", "cut", Bx, [0.07, 0.0, 0.01], [0.08, 0.018, 0.006], 100),
    ]),
    ("chair", &[
        ("seat", "sit", Bx, [0.0, 0.0, 0.45], [0.22, 0.22, 0.03], 110),
        ("backrest", "support", Bx, [0.0, 0.21, 0.72], [0.22, 0.025, 0.24], 100),
        ("legs", "move", Cy, [0.0, 0.0, 0.21], [0.2, 0.2, 0.21], 90),
    ]),
    ("bed", &[
        ("mattress", "lay", Bx, [0.0, 0.0, 0.3], [0.5, 0.95, 0.12], 200),
        ("headboard", "support", Bx, [0.0, 0.98, 0.55], [0.5, 0.04, 0.35], 110),
    ]),
    ("table", &[
        ("top", "support", Bx, [0.0, 0.0, 0.72], [0.5, 0.35, 0.03], 150),
        ("legs", "move", Cy, [0.0, 0.0, 0.35], [0.45, 0.3, 0.35], 100),
    ]),
    ("door", &[
        ("handle", "pull", Cy, [0.35, -0.06, 0.95], [0.02, 0.02, 0.08], 60),
        ("panel", "push", Bx, [0.0, 0.0, 1.0], [0.45, 0.03, 1.0], 200),
    ]),
    ("refrigerator", &[
        ("handle", "pull", Cy, [0.28, -0.38, 1.0], [0.02, 0.02, 0.25], 60),
        ("door", "open", Bx, [0.0, -0.34, 0.9], [0.35, 0.025, 0.9], 130),
        ("shelf", "contain", Bx, [0.0, 0.0, 0.9], [0.32, 0.3, 0.85], 120),
    ]),
    ("dishwasher", &[
        ("door", "open", Bx, [0.0, -0.31, 0.4], [0.3, 0.02, 0.36], 110),
        ("rack", "contain", Bx, [0.0, 0.0, 0.4], [0.28, 0.28, 0.3], 110),
        ("panel", "press", Bx, [0.0, -0.31, 0.8], [0.3, 0.02, 0.04], 60),
    ]),
    ("laptop", &[
        ("screen", "display", Bx, [0.0, 0.13, 0.14], [0.17, 0.01, 0.12], 120),
        ("keyboard", "press", Bx, [0.0, 0.0, 0.012], [0.17, 0.12, 0.012], 120),
    ]),
    ("display", &[
        ("screen", "display", Bx, [0.0, 0.0, 0.45], [0.3, 0.02, 0.18], 150),
        ("stand", "move", Cy, [0.0, 0.05, 0.14], [0.08, 0.08, 0.14], 80),
    ]),
    ("earphone", &[
        ("cups", "listen", El, [0.0, 0.0, 0.07], [0.1, 0.04, 0.06], 110),
        ("headband", "wear", El, [0.0, 0.0, 0.19], [0.1, 0.02, 0.06], 100),
    ]),
    ("hat", &[
        ("crown", "wear", El, [0.0, 0.0, 0.08], [0.1, 0.1, 0.08], 140),
        ("brim", "grasp", Cy, [0.0, 0.0, 0.01], [0.17, 0.17, 0.008], 100),
    ]),
    ("bag", &[
        ("strap", "lift", El, [0.0, 0.0, 0.42], [0.16, 0.015, 0.12], 90),
        ("body", "contain", Bx, [0.0, 0.0, 0.16], [0.18, 0.08, 0.16], 160),
    ]),
    ("trash_can", &[
        ("lid", "open", Cy, [0.0, 0.0, 0.52], [0.16, 0.16, 0.02], 80),
        ("bin", "contain", Cy, [0.0, 0.0, 0.25], [0.15, 0.15, 0.25], 150),
        ("pedal", "press", Bx, [0.0, -0.19, 0.03], [0.06, 0.04, 0.012], 40),
    ]),
    ("vase", &[
        ("body", "wrap_grasp", El, [0.0, 0.0, 0.16], [0.1, 0.1, 0.16], 160),
        ("opening", "contain", Cy, [0.0, 0.0, 0.35], [0.05, 0.05, 0.03], 60),
    ]),
    ("faucet", &[
        ("lever", "push", Bx, [0.0, 0.05, 0.3], [0.015, 0.06, 0.012], 60),
        ("spout", "pour", Cy, [0.0, -0.06, 0.22], [0.025, 0.09, 0.025], 90),
        ("base", "support", Cy, [0.0, 0.05, 0.12], [0.035, 0.035, 0.12], 80),
    ]),
    ("fork", &[
        ("handle", "grasp", Bx, [-0.08, 0.0, 0.01], [0.08, 0.012, 0.007], 100),
        ("tines", "stab", Bx, [0.07, 0.0, 0.01], [0.05, 0.022, 0.004], 100),
    ]),
];

const LOG_GRID: [f64; 8] = [-1.0, -0.7, -0.4, -0.1, 0.2, 0.5, 0.8, 1.1];

/// Style of the `k`-th part in catalog order: a distinct pair of log
/// anisotropies, a tilt, and a hue from the golden-ratio sequence.
fn style_for(k: usize) -> GaussianStyle {
    let a = LOG_GRID[k % 8];
    let b = LOG_GRID[(k / 8 + 3 * k) % 8];
    let axis = [
        (k as f64 * 1.3).sin(),
        (k as f64 * 2.1).cos(),
        0.5 + (k as f64 * 0.7).sin().abs(),
    ];
    let hue = (k as f64 * 0.618_033_988_75).fract();
    GaussianStyle {
        log_scale: [a, b, 0.0],
        orientation: Quat::from_axis_angle(axis, 0.4 + 0.9 * ((k * 5) % 7) as f64 / 7.0),
        color: hsv(hue, 0.7, 0.85),
    }
}

fn hsv(h: f64, s: f64, v: f64) -> Vec3 {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// The 21 built-in categories.
pub fn default_templates() -> Vec<ObjectTemplate> {
    let mut k = 0;
    TEMPLATES
        .iter()
        .map(|(name, parts)| ObjectTemplate {
            name: name.to_string(),
            parts: parts
                .iter()
                .map(|&(pname, aff, shape, center, half_extents, count)| {
                    let style = style_for(k);
                    k += 1;
                    PartTemplate {
                        name: pname.to_string(),
                        affordance: aff.to_string(),
                        shape,
                        center,
                        half_extents,
                        count,
                        style,
                    }
                })
                .collect(),
        })
        .collect()
}

/// One step of a rule: which part of which category, and what to say.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub category: String,
    pub affordance: String,
    pub text: String,
}

/// An instruction family. `{x}` in a template is replaced by a filler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionRule {
    pub name: String,
    pub templates: Vec<String>,
    pub fillers: Vec<String>,
    pub steps: Vec<StepSpec>,
}

impl InstructionRule {
    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.steps.iter().map(|s| s.category.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Every instruction string the rule can produce.
    pub fn instructions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.templates {
            if t.contains("{x}") {
                out.extend(self.fillers.iter().map(|f| t.replace("{x}", f)));
            } else {
                out.push(t.clone());
            }
        }
        out
    }
}

/// Default wording for each (category, affordance) step.
const STEP_TEXT: &[(&str, &str, &str)] = &[
    ("microwave", "open", "open the microwave door"),
    ("microwave", "contain", "place it inside the microwave"),
    ("microwave", "press", "press the microwave button"),
    ("bowl", "wrap_grasp", "grab the bowl"),
    ("bowl", "contain", "put it into the bowl"),
    ("mug", "grasp", "hold the mug handle"),
    ("mug", "contain", "fill the mug"),
    ("bottle", "wrap_grasp", "grab the bottle"),
    ("bottle", "open", "take off the bottle cap"),
    ("bottle", "pour", "pour from the bottle neck"),
    ("knife", "grasp", "hold the knife handle"),
    ("knife", "cut", "slice with the knife blade"),
    ("scissors", "grasp", "hold the scissors handles"),
    ("scissors", "cut", "cut with the scissors blades"),
    ("chair", "sit", "sit on the chair seat"),
    ("chair", "support", "lean against the chair back"),
    ("chair", "move", "move the chair by its legs"),
    ("bed", "lay", "lie down on the mattress"),
    ("bed", "support", "rest against the headboard"),
    ("table", "support", "put it on the table top"),
    ("table", "move", "move the table by its legs"),
    ("door", "pull", "pull the door handle"),
    ("door", "push", "push the door panel"),
    ("refrigerator", "pull", "pull the fridge handle"),
    ("refrigerator", "open", "open the fridge door"),
    ("refrigerator", "contain", "put it on the fridge shelf"),
    ("dishwasher", "open", "open the dishwasher door"),
    ("dishwasher", "contain", "put it into the dishwasher rack"),
    ("dishwasher", "press", "press the dishwasher panel"),
    ("laptop", "display", "look at the laptop screen"),
    ("laptop", "press", "type on the laptop keyboard"),
    ("display", "display", "watch the monitor screen"),
    ("display", "move", "adjust the monitor stand"),
    ("earphone", "wear", "put on the headphones"),
    ("earphone", "listen", "listen with the headphones"),
    ("hat", "wear", "wear the hat"),
    ("hat", "grasp", "hold the hat by its brim"),
    ("bag", "lift", "lift the bag by its strap"),
    ("bag", "contain", "put it in the bag"),
    ("trash_can", "open", "lift the trash can lid"),
    ("trash_can", "contain", "put it into the bin"),
    ("trash_can", "press", "press the trash can pedal"),
    ("vase", "wrap_grasp", "hold the vase"),
    ("vase", "contain", "put the flowers in the vase"),
    ("faucet", "push", "push the faucet lever"),
    ("faucet", "pour", "run water from the spout"),
    ("faucet", "support", "hold the faucet base"),
    ("fork", "grasp", "hold the fork handle"),
    ("fork", "stab", "stab the food with the fork"),
];

pub fn default_step_text(category: &str, affordance: &str) -> Option<&'static str> {
    STEP_TEXT
        .iter()
        .find(|(c, a, _)| *c == category && *a == affordance)
        .map(|(_, _, t)| *t)
}

type RuleRow = (
    &'static str,
    &'static [&'static str],
    &'static [&'static str],
    &'static [(&'static str, &'static str, Option<&'static str>)],
);

const RULES: &[RuleRow] = &[
    ("heat_food", &["heat up the {x} in the microwave", "warm my {x} with the microwave"], &["soup", "rice", "leftovers", "noodles"],
        &[("microwave", "open", None), ("bowl", "wrap_grasp", Some("place the bowl in the microwave")), ("microwave", "press", None)]),
    ("store_food", &["put the {x} away in the fridge", "put the {x} away in the refrigerator"], &["soup", "leftovers", "salad"],
        &[("refrigerator", "pull", None), ("refrigerator", "open", None), ("bowl", "wrap_grasp", None), ("refrigerator", "contain", None)]),
    ("fill_mug", &["fill the mug with water", "get some water in my mug"], &[],
        &[("mug", "grasp", None), ("faucet", "push", None), ("faucet", "pour", None)]),
    ("pour_drink", &["pour {x} from the bottle into the mug", "serve some {x} in the mug"], &["juice", "milk", "water"],
        &[("bottle", "open", None), ("bottle", "pour", None), ("mug", "contain", None)]),
    ("cut_food", &["cut the {x} with the knife", "slice some {x}"], &["bread", "cheese", "apple"],
        &[("knife", "grasp", None), ("knife", "cut", None)]),
    ("cut_and_serve", &["cut the {x} and serve it in the bowl", "slice the {x} into the bowl"], &["bread", "cheese", "apple"],
        &[("knife", "grasp", None), ("knife", "cut", None), ("bowl", "contain", None)]),
    ("eat", &["eat the {x} with the fork", "eat some {x} with the fork"], &["salad", "noodles", "rice"],
        &[("fork", "grasp", None), ("fork", "stab", None)]),
    ("trim_paper", &["cut the paper with the scissors", "trim the paper"], &[],
        &[("scissors", "grasp", None), ("scissors", "cut", None)]),
    ("work_laptop", &["sit down and work on the laptop", "work on my laptop"], &[],
        &[("chair", "sit", None), ("laptop", "display", None), ("laptop", "press", None)]),
    ("watch_show", &["sit and watch a {x} on the monitor", "watch a {x} from the chair"], &["movie", "show", "game"],
        &[("chair", "sit", None), ("display", "display", None)]),
    ("listen_music", &["listen to some {x}", "enjoy {x} with the headphones"], &["music", "podcasts"],
        &[("earphone", "wear", None), ("earphone", "listen", None)]),
    ("go_out", &["get ready to go out", "take my bag and go out"], &[],
        &[("hat", "wear", None), ("bag", "lift", None), ("door", "pull", None)]),
    ("throw_trash", &["throw away the {x}", "throw out the {x}"], &["trash", "peel"],
        &[("trash_can", "press", None), ("trash_can", "open", None), ("trash_can", "contain", None)]),
    ("wash_bowl", &["wash the bowl in the dishwasher", "clean the dirty bowl"], &[],
        &[("dishwasher", "open", None), ("bowl", "wrap_grasp", None), ("dishwasher", "contain", None), ("dishwasher", "press", None)]),
    ("rest", &["lie down and rest", "take a rest"], &[],
        &[("bed", "lay", None)]),
    ("read_in_bed", &["work on the laptop in bed", "look at the laptop in bed"], &[],
        &[("bed", "support", None), ("laptop", "display", None)]),
    ("arrange_flowers", &["put the flowers in the vase with water", "put flowers in water"], &[],
        &[("vase", "wrap_grasp", None), ("faucet", "push", None), ("faucet", "pour", None), ("vase", "contain", None)]),
    ("move_chair", &["move the chair away", "pull the chair away"], &[],
        &[("chair", "move", None)]),
    ("set_table", &["set the table for {x}", "get the table ready for {x}"], &["dinner", "lunch"],
        &[("table", "support", None), ("bowl", "wrap_grasp", Some("place the bowl on the table")), ("fork", "grasp", Some("put the fork on the table"))]),
    ("leave_room", &["go out the door", "go through the door"], &[],
        &[("door", "pull", None), ("door", "push", None)]),
    ("pack_drink", &["pack a bottle of {x} in my bag", "take some {x} in my bag"], &["water", "juice"],
        &[("bottle", "wrap_grasp", None), ("bag", "contain", None), ("bag", "lift", None)]),
    ("clean_table", &["clean the table", "clean up the table"], &[],
        &[("bowl", "wrap_grasp", None), ("table", "support", Some("wipe the table top"))]),
    ("relax_chair", &["relax in the chair", "lean back and relax"], &[],
        &[("chair", "sit", None), ("chair", "support", None)]),
    ("take_off_hat", &["take off the hat", "take my hat off"], &[],
        &[("hat", "grasp", None)]),
    ("drink", &["drink from the mug", "take a sip of {x}"], &["tea", "coffee"],
        &[("mug", "grasp", Some("lift the mug by its handle")), ("mug", "contain", Some("sip from the mug"))]),
    ("watch_then_sleep", &["watch a {x} and go to sleep", "watch a {x} in bed"], &["movie", "show"],
        &[("display", "display", None), ("bed", "lay", None)]),
    ("fridge_drink", &["get a {x} from the fridge", "grab a {x} from the refrigerator"], &["juice", "milk"],
        &[("refrigerator", "pull", None), ("refrigerator", "open", None), ("bottle", "wrap_grasp", None)]),
    ("cook_and_eat", &["heat the {x} and eat it", "warm up {x} to eat"], &["soup", "rice", "noodles"],
        &[("microwave", "open", None), ("bowl", "wrap_grasp", Some("place the bowl in the microwave")), ("microwave", "press", None), ("fork", "grasp", None)]),
    ("dump_leftovers", &["throw the {x} in the trash", "put the {x} in the trash"], &["leftovers", "noodles"],
        &[("bowl", "wrap_grasp", None), ("trash_can", "press", None), ("trash_can", "contain", None)]),
    ("adjust_monitor", &["adjust the monitor", "adjust the screen"], &[],
        &[("display", "move", None)]),
    ("type_text", &["type a letter on the laptop", "write a letter"], &[],
        &[("laptop", "press", None)]),
    ("video_call", &["make a call", "start a call on the laptop"], &[],
        &[("earphone", "wear", None), ("laptop", "display", None), ("laptop", "press", None)]),
    ("fill_vase", &["fill the vase with water", "put water in the vase"], &[],
        &[("vase", "wrap_grasp", None), ("faucet", "push", None), ("faucet", "pour", None)]),
    ("wash_hands", &["wash my hands", "wash my hands at the faucet"], &[],
        &[("faucet", "push", None), ("faucet", "pour", None)]),
    ("open_bottle", &["open the bottle", "take the cap off the bottle"], &[],
        &[("bottle", "wrap_grasp", None), ("bottle", "open", None)]),
    ("craft", &["cut out a paper {x}", "make a paper {x} and pack it"], &["hat", "bowl"],
        &[("scissors", "grasp", None), ("scissors", "cut", None), ("bag", "contain", None)]),
    ("snack", &["cut an apple and eat it with the fork", "make an apple snack"], &[],
        &[("knife", "grasp", None), ("knife", "cut", None), ("fork", "stab", None)]),
    ("store_bottle", &["put the bottle in the fridge", "put the {x} in the fridge"], &["juice", "milk", "water"],
        &[("bottle", "wrap_grasp", None), ("refrigerator", "pull", None), ("refrigerator", "open", None), ("refrigerator", "contain", None)]),
    ("rearrange", &["move the table and the chair", "rearrange the furniture"], &[],
        &[("table", "move", None), ("chair", "move", None)]),
    ("music_in_bed", &["listen to {x} in bed", "listen to {x} and go to sleep"], &["music", "podcasts"],
        &[("earphone", "wear", None), ("earphone", "listen", None), ("bed", "lay", None)]),
    ("unpack", &["unpack my bag", "take it out of the bag"], &[],
        &[("bag", "lift", None), ("bag", "contain", Some("take it out of the bag"))]),
    ("heat_drink", &["heat my {x} in the microwave", "warm up my {x}"], &["tea", "coffee", "milk"],
        &[("microwave", "open", None), ("mug", "grasp", Some("place the mug in the microwave")), ("microwave", "press", None)]),
    ("serve_meal", &["serve the {x} at the table", "bring the {x} to the table"], &["soup", "salad"],
        &[("bowl", "wrap_grasp", None), ("table", "support", Some("set it on the table top"))]),
    ("recycle_bottle", &["put the bottle in the trash", "throw the bottle away"], &[],
        &[("bottle", "wrap_grasp", None), ("trash_can", "open", None), ("trash_can", "contain", None)]),
    ("put_on_hat", &["put on my hat", "wear a hat"], &[],
        &[("hat", "wear", None)]),
    ("tea_time", &["make some {x} and sit down", "enjoy some {x} in the chair"], &["tea", "coffee"],
        &[("mug", "grasp", None), ("faucet", "pour", Some("fill it from the spout")), ("chair", "sit", None)]),
    ("run_dishwasher", &["start the dishwasher", "run the dishwasher"], &[],
        &[("dishwasher", "press", None)]),
    ("check_fridge", &["check the fridge", "look inside the refrigerator"], &[],
        &[("refrigerator", "pull", None), ("refrigerator", "open", None)]),
    ("clean_knife", &["clean the knife", "put the knife in the dishwasher"], &[],
        &[("knife", "grasp", None), ("dishwasher", "open", None), ("dishwasher", "contain", None)]),
    ("bedtime", &["get ready for bed", "go to bed"], &[],
        &[("hat", "grasp", Some("take off the hat")), ("bed", "lay", None)]),
    ("pour_bowl", &["pour {x} into the bowl", "fill the bowl with {x}"], &["milk", "water"],
        &[("bottle", "open", None), ("bottle", "pour", None), ("bowl", "contain", None)]),
    ("fix_faucet", &["check the faucet", "check the water"], &[],
        &[("faucet", "support", None), ("faucet", "push", None)]),
];

pub fn default_rules() -> Vec<InstructionRule> {
    RULES
        .iter()
        .map(|(name, templates, fillers, steps)| InstructionRule {
            name: name.to_string(),
            templates: templates.iter().map(|s| s.to_string()).collect(),
            fillers: fillers.iter().map(|s| s.to_string()).collect(),
            steps: steps
                .iter()
                .map(|&(c, a, t)| StepSpec {
                    category: c.to_string(),
                    affordance: a.to_string(),
                    text: t
                        .or_else(|| default_step_text(c, a))
                        .unwrap_or_else(|| panic!("no wording for {c}/{a}"))
                        .to_string(),
                })
                .collect(),
        })
        .collect()
}
