//! A small deterministic cooking text-world.
//!
//! Games are generated from a seed: a grid of connected rooms, furniture,
//! food and clutter, and a recipe to cook. Each game is played along its
//! walkthrough; after every walkthrough step a few random admissible actions
//! are branched off the on-path state and recorded as well. Every recorded
//! transition carries the seen graph before and after the action.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BeliefGraph, Entity, EntityKind, Relation, RelationRegistry, Triple, UpdateSequence};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("inadmissible action `{0}`")]
    InadmissibleAction(String),
    #[error("could not generate a solvable game after {attempts} attempts (seed {seed})")]
    GenerationFailure { seed: u64, attempts: usize },
    #[error("invalid world config: {0}")]
    Config(String),
}

pub const PLAYER: &str = "player";
pub const RECIPE: &str = "recipe";
pub const COOKBOOK: &str = "cookbook";
pub const KNIFE: &str = "knife";
pub const MEAL: &str = "meal";
pub const KITCHEN: &str = "kitchen";

/// Verbs of the action grammar, in the order used for reports.
pub const ACTION_VERBS: [&str; 12] = [
    "look", "go", "open", "close", "take", "drop", "examine", "slice", "chop", "dice", "cook", "prepare",
];

fn default_rooms() -> Vec<String> {
    ROOM_CATALOG.iter().map(|r| r.name.to_string()).filter(|n| n != KITCHEN).collect()
}

fn default_food() -> Vec<String> {
    [
        "apple", "potato", "carrot", "pepper", "onion", "tomato", "cucumber", "mushroom", "lettuce", "banana",
    ]
    .map(String::from)
    .to_vec()
}

fn default_items() -> Vec<String> {
    ["towel", "book", "coin", "lamp", "shoe", "mug", "plate", "hat", "candle", "key"]
        .map(String::from)
        .to_vec()
}

fn default_adjectives() -> Vec<String> {
    ["red", "yellow", "green", "white", "purple", "sweet", "hot", "fresh"]
        .map(String::from)
        .to_vec()
}

fn default_relations() -> Vec<String> {
    RelationRegistry::default().labels().to_vec()
}

/// Generation parameters. Every field has a default, so a config file only
/// needs the keys it wants to override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Rooms per game, kitchen included.
    pub n_rooms: usize,
    /// Fixes the room layout across games when set.
    pub room_layout_seed: Option<u64>,
    /// Non-kitchen room names to draw from; each must be in the room catalog.
    pub rooms: Vec<String>,
    pub food_nouns: Vec<String>,
    pub object_nouns: Vec<String>,
    pub adjectives: Vec<String>,
    /// Clutter objects placed besides the recipe ingredients, knife and cookbook.
    pub n_objects: usize,
    pub relations: Vec<String>,
    pub n_random_actions_per_step: usize,
    /// When true, the random actions after a walkthrough step are chained
    /// instead of each branching from the walkthrough state.
    pub random_actions_compound: bool,
    pub recipe_length: usize,
    pub max_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_rooms: 5,
            room_layout_seed: None,
            rooms: default_rooms(),
            food_nouns: default_food(),
            object_nouns: default_items(),
            adjectives: default_adjectives(),
            n_objects: 4,
            relations: default_relations(),
            n_random_actions_per_step: 5,
            random_actions_compound: false,
            recipe_length: 2,
            max_attempts: 20,
        }
    }
}

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<Self, WorldError> {
        let cfg: WorldConfig = toml::from_str(text).map_err(|e| WorldError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let err = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.n_rooms == 0 {
            return err("n_rooms must be at least 1");
        }
        if self.n_rooms > self.rooms.len() + 1 {
            return err("n_rooms exceeds the room pool");
        }
        for r in &self.rooms {
            if room_spec(r).is_none() || r == KITCHEN {
                return Err(WorldError::Config(format!("unknown room `{r}`")));
            }
        }
        if self.food_nouns.is_empty() || self.object_nouns.is_empty() || self.adjectives.is_empty() {
            return err("name pools must be nonempty");
        }
        if self.recipe_length == 0 {
            return err("recipe_length must be at least 1");
        }
        if self.recipe_length + self.n_objects > self.food_nouns.len() * self.adjectives.len() {
            return err("name pools too small for the requested object count");
        }
        let registry = self.registry()?;
        for needed in crate::graph::DEFAULT_RELATIONS {
            if !registry.contains(needed) {
                return Err(WorldError::Config(format!("relation registry lacks `{needed}`")));
            }
        }
        if self.max_attempts == 0 {
            return err("max_attempts must be at least 1");
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<RelationRegistry, WorldError> {
        RelationRegistry::new(self.relations.iter().cloned()).map_err(|e| WorldError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    fn offset(self) -> (i32, i32) {
        match self {
            Direction::North => (0, 1),
            Direction::South => (0, -1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }

    fn relation(self) -> &'static str {
        match self {
            Direction::North => "north_of",
            Direction::South => "south_of",
            Direction::East => "east_of",
            Direction::West => "west_of",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FurnitureKind {
    Container,
    Supporter,
    /// Cooking appliance producing the given state.
    Appliance(&'static str),
}

struct RoomSpec {
    name: &'static str,
    furniture: &'static [(&'static str, FurnitureKind)],
}

use FurnitureKind::{Appliance, Container, Supporter};

const ROOM_CATALOG: &[RoomSpec] = &[
    RoomSpec {
        name: KITCHEN,
        furniture: &[
            ("fridge", Container),
            ("counter", Supporter),
            ("stove", Appliance("fried")),
            ("oven", Appliance("roasted")),
        ],
    },
    RoomSpec { name: "backyard", furniture: &[("patio table", Supporter), ("bbq", Appliance("grilled"))] },
    RoomSpec { name: "shed", furniture: &[("toolbox", Container), ("workbench", Supporter)] },
    RoomSpec { name: "pantry", furniture: &[("shelf", Supporter)] },
    RoomSpec { name: "bedroom", furniture: &[("bed", Supporter), ("wardrobe", Container)] },
    RoomSpec { name: "bathroom", furniture: &[("medicine cabinet", Container)] },
    RoomSpec { name: "living room", furniture: &[("sofa", Supporter), ("chest", Container)] },
    RoomSpec { name: "corridor", furniture: &[("shoe rack", Supporter)] },
    RoomSpec { name: "garden", furniture: &[] },
    RoomSpec { name: "cellar", furniture: &[("crate", Container)] },
    RoomSpec { name: "garage", furniture: &[("trunk", Container), ("tool bench", Supporter)] },
];

fn room_spec(name: &str) -> Option<&'static RoomSpec> {
    ROOM_CATALOG.iter().find(|r| r.name == name)
}

const CUT_STATES: [(&str, &str); 3] = [("slice", "sliced"), ("chop", "chopped"), ("dice", "diced")];

fn cook_verb(state: &str) -> &'static str {
    match state {
        "fried" => "fry",
        "roasted" => "roast",
        _ => "grill",
    }
}

fn is_cut_state(state: &str) -> bool {
    CUT_STATES.iter().any(|(_, s)| *s == state)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Room {
    name: String,
    exits: BTreeMap<Direction, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Furniture {
    name: String,
    room: usize,
    kind: FurnitureKind,
    open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjectKind {
    Food,
    Item,
    Knife,
    Cookbook,
    Meal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Floor(usize),
    In(usize),
    On(usize),
    Inventory,
    Gone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Object {
    name: String,
    kind: ObjectKind,
    placement: Placement,
    /// Cut state then cook state, when present.
    states: Vec<String>,
}

/// Full game state. Cloning is cheap enough to branch off random actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameState {
    rooms: Vec<Room>,
    furniture: Vec<Furniture>,
    objects: Vec<Object>,
    player_room: usize,
    /// (object index, required state)
    recipe: Vec<(usize, String)>,
    recipe_read: bool,
    meal_ready: bool,
    /// Connections the player has walked through: (to, from, direction moved).
    traversed: BTreeSet<(usize, usize, Direction)>,
    /// False until the first action; before that only the player's position is known.
    observed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Action {
    Look,
    Go(Direction),
    Open(usize),
    Close(usize),
    Take { obj: usize, from: Option<usize> },
    Drop(usize),
    Examine(usize),
    Cut { obj: usize, verb: usize },
    Cook { obj: usize, appliance: usize },
    Prepare,
}

fn ent(label: &str, kind: EntityKind) -> Entity {
    Entity::new(label, kind).expect("world labels are valid")
}

fn triple(head: (&str, EntityKind), tail: (&str, EntityKind), rel: &str) -> Triple {
    Triple::new(ent(head.0, head.1), ent(tail.0, tail.1), Relation::unchecked(rel))
}

fn with_article(phrase: &str) -> String {
    let article = match phrase.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    };
    format!("{article} {phrase}")
}

fn list_phrase(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

const OBJ: EntityKind = EntityKind::Object;
const LOC: EntityKind = EntityKind::Location;
const STATE: EntityKind = EntityKind::State;
const PLAYER_KIND: EntityKind = EntityKind::Player;

impl GameState {
    fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    fn room_of(&self, placement: Placement) -> Option<usize> {
        match placement {
            Placement::Floor(r) => Some(r),
            Placement::In(f) | Placement::On(f) => Some(self.furniture[f].room),
            Placement::Inventory => Some(self.player_room),
            Placement::Gone => None,
        }
    }

    fn object_phrase(&self, idx: usize) -> String {
        let o = &self.objects[idx];
        let mut words: Vec<&str> = o.states.iter().map(String::as_str).collect();
        words.push(&o.name);
        with_article(&words.join(" "))
    }

    fn furniture_phrase(&self, f: usize) -> String {
        let fu = &self.furniture[f];
        match fu.kind {
            Container => with_article(&format!("{} {}", if fu.open { "open" } else { "closed" }, fu.name)),
            _ => with_article(&fu.name),
        }
    }

    fn objects_at(&self, placement: Placement) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&i| self.objects[i].placement == placement)
            .collect()
    }

    fn inventory(&self) -> Vec<usize> {
        self.objects_at(Placement::Inventory)
    }

    fn has_knife(&self) -> bool {
        self.objects
            .iter()
            .any(|o| o.kind == ObjectKind::Knife && o.placement == Placement::Inventory)
    }

    fn furniture_in(&self, room: usize) -> Vec<usize> {
        (0..self.furniture.len()).filter(|&f| self.furniture[f].room == room).collect()
    }

    /// Objects the player can currently see: floor, supporters, open
    /// containers in the current room, and the inventory.
    fn visible_objects(&self) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&i| match self.objects[i].placement {
                Placement::Floor(r) => r == self.player_room,
                Placement::On(f) => self.furniture[f].room == self.player_room,
                Placement::In(f) => self.furniture[f].room == self.player_room && self.furniture[f].open,
                Placement::Inventory => true,
                Placement::Gone => false,
            })
            .collect()
    }

    fn placement_triple(&self, idx: usize) -> Option<Triple> {
        let o = &self.objects[idx];
        let me = (o.name.as_str(), OBJ);
        Some(match o.placement {
            Placement::Floor(r) => triple(me, (&self.rooms[r].name, LOC), "at"),
            Placement::In(f) => triple(me, (&self.furniture[f].name, OBJ), "in"),
            Placement::On(f) => triple(me, (&self.furniture[f].name, OBJ), "on"),
            Placement::Inventory => triple(me, (PLAYER, PLAYER_KIND), "in"),
            Placement::Gone => return None,
        })
    }

    fn object_facts(&self, idx: usize, out: &mut BTreeSet<Triple>) {
        if let Some(t) = self.placement_triple(idx) {
            out.insert(t);
            let o = &self.objects[idx];
            for s in &o.states {
                out.insert(triple((&o.name, OBJ), (s, STATE), "is"));
            }
        }
    }

    fn furniture_facts(&self, f: usize, out: &mut BTreeSet<Triple>) {
        let fu = &self.furniture[f];
        out.insert(triple((&fu.name, OBJ), (&self.rooms[fu.room].name, LOC), "at"));
        if fu.kind == Container {
            out.insert(triple((&fu.name, OBJ), (if fu.open { "open" } else { "closed" }, STATE), "is"));
        }
    }

    fn recipe_facts(&self, out: &mut BTreeSet<Triple>) {
        for (idx, need) in &self.recipe {
            let o = &self.objects[*idx];
            if o.placement == Placement::Gone {
                continue;
            }
            out.insert(triple((&o.name, OBJ), (RECIPE, OBJ), "part_of"));
            out.insert(triple((&o.name, OBJ), (need, STATE), "needs"));
        }
    }

    fn connection_triple(&self, to: usize, from: usize, dir: Direction) -> Triple {
        triple((&self.rooms[to].name, LOC), (&self.rooms[from].name, LOC), dir.relation())
    }

    /// The complete game state as a graph.
    pub fn full_graph(&self) -> BeliefGraph {
        let mut out = BTreeSet::new();
        out.insert(triple((PLAYER, PLAYER_KIND), (&self.rooms[self.player_room].name, LOC), "at"));
        for (from, room) in self.rooms.iter().enumerate() {
            for (dir, &to) in &room.exits {
                out.insert(self.connection_triple(to, from, *dir));
            }
        }
        for f in 0..self.furniture.len() {
            self.furniture_facts(f, &mut out);
        }
        for i in 0..self.objects.len() {
            self.object_facts(i, &mut out);
        }
        self.recipe_facts(&mut out);
        out.into_iter().collect()
    }

    /// Facts visible right now: the current room, its furniture and visible
    /// objects, the inventory, connections already walked, and the recipe
    /// once read.
    fn visible_facts(&self) -> BTreeSet<Triple> {
        let mut out = BTreeSet::new();
        out.insert(triple((PLAYER, PLAYER_KIND), (&self.rooms[self.player_room].name, LOC), "at"));
        if !self.observed {
            return out;
        }
        for f in self.furniture_in(self.player_room) {
            self.furniture_facts(f, &mut out);
        }
        for i in self.visible_objects() {
            self.object_facts(i, &mut out);
        }
        for &(to, from, dir) in &self.traversed {
            out.insert(self.connection_triple(to, from, dir));
        }
        if self.recipe_read {
            self.recipe_facts(&mut out);
        }
        out
    }

    fn admissible(&self) -> Vec<Action> {
        let mut out = vec![Action::Look];
        for dir in self.rooms[self.player_room].exits.keys() {
            out.push(Action::Go(*dir));
        }
        let here = self.furniture_in(self.player_room);
        for &f in &here {
            if self.furniture[f].kind == Container {
                out.push(if self.furniture[f].open { Action::Close(f) } else { Action::Open(f) });
            }
        }
        let visible = self.visible_objects();
        for &i in &visible {
            match self.objects[i].placement {
                Placement::Floor(_) => out.push(Action::Take { obj: i, from: None }),
                Placement::In(f) | Placement::On(f) => out.push(Action::Take { obj: i, from: Some(f) }),
                _ => {}
            }
        }
        for i in self.inventory() {
            out.push(Action::Drop(i));
        }
        for &i in &visible {
            out.push(Action::Examine(i));
        }
        let knife = self.has_knife();
        for i in self.inventory() {
            let o = &self.objects[i];
            if o.kind != ObjectKind::Food {
                continue;
            }
            if knife && !o.states.iter().any(|s| is_cut_state(s)) {
                for verb in 0..CUT_STATES.len() {
                    out.push(Action::Cut { obj: i, verb });
                }
            }
            if !o.states.iter().any(|s| !is_cut_state(s)) {
                for &f in &here {
                    if let Appliance(_) = self.furniture[f].kind {
                        out.push(Action::Cook { obj: i, appliance: f });
                    }
                }
            }
        }
        if self.can_prepare() {
            out.push(Action::Prepare);
        }
        out
    }

    fn can_prepare(&self) -> bool {
        !self.meal_ready
            && self.recipe_read
            && self.rooms[self.player_room].name == KITCHEN
            && self.recipe.iter().all(|(i, need)| {
                let o = &self.objects[*i];
                o.placement == Placement::Inventory && o.states.contains(need)
            })
    }

    fn render_action(&self, action: &Action) -> String {
        match action {
            Action::Look => "look".into(),
            Action::Go(d) => format!("go {}", d.as_str()),
            Action::Open(f) => format!("open {}", self.furniture[*f].name),
            Action::Close(f) => format!("close {}", self.furniture[*f].name),
            Action::Take { obj, from: None } => format!("take {}", self.objects[*obj].name),
            Action::Take { obj, from: Some(f) } => {
                format!("take {} from {}", self.objects[*obj].name, self.furniture[*f].name)
            }
            Action::Drop(i) => format!("drop {}", self.objects[*i].name),
            Action::Examine(i) => format!("examine {}", self.objects[*i].name),
            Action::Cut { obj, verb } => format!("{} {}", CUT_STATES[*verb].0, self.objects[*obj].name),
            Action::Cook { obj, appliance } => {
                format!("cook {} with {}", self.objects[*obj].name, self.furniture[*appliance].name)
            }
            Action::Prepare => "prepare meal".into(),
        }
    }

    fn describe_room(&self) -> String {
        let room = &self.rooms[self.player_room];
        let mut s = format!("-= {} =- You are in the {}.", capitalize(&room.name), room.name);
        let here = self.furniture_in(self.player_room);
        if !here.is_empty() {
            let names: Vec<String> = here.iter().map(|&f| self.furniture_phrase(f)).collect();
            s.push_str(&format!(" You see {}.", list_phrase(&names)));
        }
        for &f in &here {
            let fu = &self.furniture[f];
            let inside = match fu.kind {
                Supporter => self.objects_at(Placement::On(f)),
                Container if fu.open => self.objects_at(Placement::In(f)),
                _ => continue,
            };
            if inside.is_empty() {
                continue;
            }
            let names: Vec<String> = inside.iter().map(|&i| self.object_phrase(i)).collect();
            let prep = if fu.kind == Supporter { "On" } else { "In" };
            s.push_str(&format!(" {prep} the {} is {}.", fu.name, list_phrase(&names)));
        }
        let floor = self.objects_at(Placement::Floor(self.player_room));
        if !floor.is_empty() {
            let names: Vec<String> = floor.iter().map(|&i| self.object_phrase(i)).collect();
            s.push_str(&format!(" On the floor is {}.", list_phrase(&names)));
        }
        let exits: Vec<String> = room.exits.keys().map(|d| d.as_str().to_string()).collect();
        if exits.is_empty() {
            s.push_str(" There is no exit.");
        } else {
            s.push_str(&format!(" Exits lead {}.", list_phrase(&exits)));
        }
        s
    }

    fn apply(&mut self, action: &Action) -> String {
        self.observed = true;
        match *action {
            Action::Look => self.describe_room(),
            Action::Go(dir) => {
                let from = self.player_room;
                let to = self.rooms[from].exits[&dir];
                self.player_room = to;
                self.traversed.insert((to, from, dir));
                self.describe_room()
            }
            Action::Open(f) => {
                self.furniture[f].open = true;
                let inside = self.objects_at(Placement::In(f));
                let name = &self.furniture[f].name;
                if inside.is_empty() {
                    format!("You open the {name}. It is empty.")
                } else {
                    let names: Vec<String> = inside.iter().map(|&i| self.object_phrase(i)).collect();
                    format!("You open the {name}. Inside is {}.", list_phrase(&names))
                }
            }
            Action::Close(f) => {
                self.furniture[f].open = false;
                format!("You close the {}.", self.furniture[f].name)
            }
            Action::Take { obj, from } => {
                self.objects[obj].placement = Placement::Inventory;
                match from {
                    Some(f) => format!("You take the {} from the {}.", self.objects[obj].name, self.furniture[f].name),
                    None => format!("You pick up the {}.", self.objects[obj].name),
                }
            }
            Action::Drop(obj) => {
                self.objects[obj].placement = Placement::Floor(self.player_room);
                format!("You drop the {} on the floor.", self.objects[obj].name)
            }
            Action::Examine(obj) => {
                let o = &self.objects[obj];
                match o.kind {
                    ObjectKind::Cookbook if !self.recipe.is_empty() => {
                        self.recipe_read = true;
                        let parts: Vec<String> = self
                            .recipe
                            .iter()
                            .filter(|(i, _)| self.objects[*i].placement != Placement::Gone)
                            .map(|(i, need)| with_article(&format!("{need} {}", self.objects[*i].name)))
                            .collect();
                        if parts.is_empty() {
                            "The recipe is done.".to_string()
                        } else {
                            format!("The recipe needs {}.", list_phrase(&parts))
                        }
                    }
                    _ if o.states.is_empty() => format!("You see nothing special about the {}.", o.name),
                    _ => format!("The {} is {}.", o.name, list_phrase(&o.states)),
                }
            }
            Action::Cut { obj, verb } => {
                let (v, state) = CUT_STATES[verb];
                let o = &mut self.objects[obj];
                o.states.insert(0, state.to_string());
                format!("You {v} the {}.", o.name)
            }
            Action::Cook { obj, appliance } => {
                let Appliance(state) = self.furniture[appliance].kind else {
                    unreachable!("cook targets appliances")
                };
                let o = &mut self.objects[obj];
                o.states.push(state.to_string());
                format!("You {} the {} with the {}.", cook_verb(state), o.name, self.furniture[appliance].name)
            }
            Action::Prepare => {
                for (i, _) in self.recipe.clone() {
                    self.objects[i].placement = Placement::Gone;
                }
                self.meal_ready = true;
                self.objects.push(Object {
                    name: MEAL.to_string(),
                    kind: ObjectKind::Meal,
                    placement: Placement::Inventory,
                    states: Vec::new(),
                });
                "You prepare the meal. Adding the meal to your inventory.".to_string()
            }
        }
    }

    pub fn player_location(&self) -> &str {
        &self.rooms[self.player_room].name
    }
}

/// Every action accepted in `state`, in a deterministic order.
pub fn admissible_actions(state: &GameState) -> Vec<String> {
    state.admissible().iter().map(|a| state.render_action(a)).collect()
}

/// Performs `action` and returns the next state with its observation text.
pub fn step(state: &GameState, action: &str) -> Result<(GameState, String), WorldError> {
    let wanted = action.trim().to_lowercase();
    let chosen = state
        .admissible()
        .into_iter()
        .find(|a| state.render_action(a) == wanted)
        .ok_or_else(|| WorldError::InadmissibleAction(action.to_string()))?;
    let mut next = state.clone();
    let obs = next.apply(&chosen);
    Ok((next, obs))
}

/// The seen graph after arriving in `state`, given the seen graph before.
/// Facts stay seen while they remain true; facts visible now are added.
pub fn observed_subgraph(state: &GameState, history: &BeliefGraph) -> BeliefGraph {
    let full = state.full_graph();
    let mut seen: BTreeSet<Triple> = history.iter().filter(|t| full.contains(t)).cloned().collect();
    seen.extend(state.visible_facts());
    seen.into_iter().collect()
}

/// One recorded step: seen graph before, action, observation, seen graph after.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub game: u64,
    pub step: usize,
    /// 0 for the walkthrough step, 1.. for the random actions recorded after it.
    pub branch: usize,
    pub g_seen_prev: BeliefGraph,
    pub action: String,
    pub observation: String,
    pub g_seen_next: BeliefGraph,
    /// Canonical diff between the two graphs.
    pub ops: UpdateSequence,
}

impl Transition {
    pub fn is_on_path(&self) -> bool {
        self.branch == 0
    }

    /// Leading verb of the action.
    pub fn verb(&self) -> &str {
        self.action.split_whitespace().next().unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub struct Game {
    pub id: u64,
    pub seed: u64,
    pub walkthrough: Vec<String>,
    pub transitions: Vec<Transition>,
    /// Full graph after each transition (same indexing as `transitions`).
    pub full_graphs: Vec<BeliefGraph>,
}

impl Game {
    pub fn on_path(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(|t| t.is_on_path())
    }
}

/// Which adjective–noun combinations a split may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamePool {
    Train,
    Test,
    Any,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Held-out names: one combination in four goes to the test pool.
pub fn name_pool_of(name: &str) -> NamePool {
    if fnv1a(name) % 4 == 0 {
        NamePool::Test
    } else {
        NamePool::Train
    }
}

fn candidate_names(adjectives: &[String], nouns: &[String], pool: NamePool) -> Vec<String> {
    let mut out = Vec::new();
    for noun in nouns {
        for (i, a) in adjectives.iter().enumerate() {
            out.push(format!("{a} {noun}"));
            for b in &adjectives[i + 1..] {
                out.push(format!("{a} {b} {noun}"));
            }
        }
    }
    out.retain(|n| pool == NamePool::Any || name_pool_of(n) == pool);
    out
}

fn sample_names(rng: &mut ChaCha8Rng, pool: &[String], n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut nouns_used: BTreeSet<String> = taken.iter().filter_map(|n| n.split(' ').last().map(String::from)).collect();
    let mut order: Vec<&String> = pool.iter().collect();
    order.shuffle(rng);
    for name in order {
        if out.len() == n {
            break;
        }
        let noun = name.split(' ').last().unwrap_or(name).to_string();
        if taken.contains(name) || nouns_used.contains(&noun) {
            continue;
        }
        nouns_used.insert(noun);
        taken.insert(name.clone());
        out.push(name.clone());
    }
    out
}

fn build_layout(rng: &mut ChaCha8Rng, names: Vec<String>) -> Vec<Room> {
    let mut cells: Vec<(i32, i32)> = vec![(0, 0)];
    let mut rooms: Vec<Room> = vec![Room { name: names[0].clone(), exits: BTreeMap::new() }];
    while rooms.len() < names.len() {
        let from = rng.gen_range(0..cells.len());
        let dir = Direction::ALL[rng.gen_range(0..4)];
        let (dx, dy) = dir.offset();
        let cell = (cells[from].0 + dx, cells[from].1 + dy);
        if cells.contains(&cell) {
            continue;
        }
        let idx = rooms.len();
        cells.push(cell);
        rooms.push(Room { name: names[idx].clone(), exits: BTreeMap::new() });
        rooms[from].exits.insert(dir, idx);
        rooms[idx].exits.insert(dir.opposite(), from);
    }
    // a few extra doors between neighbouring cells
    for a in 0..rooms.len() {
        for dir in Direction::ALL {
            let (dx, dy) = dir.offset();
            let cell = (cells[a].0 + dx, cells[a].1 + dy);
            if let Some(b) = cells.iter().position(|c| *c == cell) {
                if !rooms[a].exits.contains_key(&dir) && a < b && rng.gen_bool(0.3) {
                    rooms[a].exits.insert(dir, b);
                    rooms[b].exits.insert(dir.opposite(), a);
                }
            }
        }
    }
    rooms
}

fn new_world(config: &WorldConfig, rng: &mut ChaCha8Rng, names: NamePool) -> GameState {
    let mut layout_rng = match config.room_layout_seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::seed_from_u64(rng.gen()),
    };
    let mut pool: Vec<String> = config.rooms.clone();
    pool.shuffle(&mut layout_rng);
    let mut room_names = vec![KITCHEN.to_string()];
    room_names.extend(pool.into_iter().take(config.n_rooms - 1));
    room_names.shuffle(&mut layout_rng);
    let rooms = build_layout(&mut layout_rng, room_names);

    let mut furniture = Vec::new();
    for (r, room) in rooms.iter().enumerate() {
        for (name, kind) in room_spec(&room.name).expect("validated").furniture {
            furniture.push(Furniture {
                name: name.to_string(),
                room: r,
                kind: *kind,
                open: *kind == Container && rng.gen_bool(0.4),
            });
        }
    }
    let counter = furniture.iter().position(|f| f.name == "counter").expect("kitchen counter");

    let mut taken = BTreeSet::new();
    let food_pool = candidate_names(&config.adjectives, &config.food_nouns, names);
    let item_pool = candidate_names(&config.adjectives, &config.object_nouns, names);
    let n_clutter_food = config.n_objects / 2;
    let food = sample_names(rng, &food_pool, config.recipe_length + n_clutter_food, &mut taken);
    let items = sample_names(rng, &item_pool, config.n_objects - n_clutter_food, &mut taken);

    let holders: Vec<usize> = (0..furniture.len())
        .filter(|&f| matches!(furniture[f].kind, Container | Supporter))
        .collect();
    let place = |rng: &mut ChaCha8Rng| -> Placement {
        if holders.is_empty() || rng.gen_bool(0.2) {
            Placement::Floor(rng.gen_range(0..rooms.len()))
        } else {
            let f = holders[rng.gen_range(0..holders.len())];
            if furniture[f].kind == Container {
                Placement::In(f)
            } else {
                Placement::On(f)
            }
        }
    };

    let mut objects = vec![
        Object { name: COOKBOOK.into(), kind: ObjectKind::Cookbook, placement: Placement::On(counter), states: vec![] },
        Object { name: KNIFE.into(), kind: ObjectKind::Knife, placement: place(rng), states: vec![] },
    ];
    for name in &food {
        objects.push(Object { name: name.clone(), kind: ObjectKind::Food, placement: place(rng), states: vec![] });
    }
    for name in &items {
        objects.push(Object { name: name.clone(), kind: ObjectKind::Item, placement: place(rng), states: vec![] });
    }

    let mut needs: Vec<&str> = CUT_STATES.iter().map(|(_, s)| *s).collect();
    for f in &furniture {
        if let Appliance(s) = f.kind {
            needs.push(s);
        }
    }
    let recipe = (0..config.recipe_length)
        .map(|k| (2 + k, needs[rng.gen_range(0..needs.len())].to_string()))
        .collect();
    GameState {
        player_room: rng.gen_range(0..rooms.len()),
        rooms,
        furniture,
        objects,
        recipe,
        recipe_read: false,
        meal_ready: false,
        traversed: BTreeSet::new(),
        observed: false,
    }
}

fn path_to(state: &GameState, target: usize) -> Option<Vec<Direction>> {
    let mut prev: BTreeMap<usize, (usize, Direction)> = BTreeMap::new();
    let mut queue = VecDeque::from([state.player_room]);
    let mut seen = BTreeSet::from([state.player_room]);
    while let Some(r) = queue.pop_front() {
        if r == target {
            let mut dirs = Vec::new();
            let mut cur = r;
            while cur != state.player_room {
                let (p, d) = prev[&cur];
                dirs.push(d);
                cur = p;
            }
            dirs.reverse();
            return Some(dirs);
        }
        for (d, &n) in &state.rooms[r].exits {
            if seen.insert(n) {
                prev.insert(n, (r, *d));
                queue.push_back(n);
            }
        }
    }
    None
}

struct Planner {
    state: GameState,
    actions: Vec<String>,
}

impl Planner {
    fn act(&mut self, action: String) -> Result<(), WorldError> {
        let (next, _) = step(&self.state, &action)?;
        self.state = next;
        self.actions.push(action);
        Ok(())
    }

    fn goto(&mut self, room: usize) -> Result<(), WorldError> {
        let dirs = path_to(&self.state, room).ok_or_else(|| WorldError::InadmissibleAction("unreachable".into()))?;
        for d in dirs {
            self.act(format!("go {}", d.as_str()))?;
        }
        Ok(())
    }

    fn fetch(&mut self, obj: usize) -> Result<(), WorldError> {
        let placement = self.state.objects[obj].placement;
        if placement == Placement::Inventory {
            return Ok(());
        }
        let room = self.state.room_of(placement).expect("object exists");
        self.goto(room)?;
        let name = self.state.objects[obj].name.clone();
        match placement {
            Placement::In(f) => {
                let fname = self.state.furniture[f].name.clone();
                if !self.state.furniture[f].open {
                    self.act(format!("open {fname}"))?;
                }
                self.act(format!("take {name} from {fname}"))
            }
            Placement::On(f) => {
                let fname = self.state.furniture[f].name.clone();
                self.act(format!("take {name} from {fname}"))
            }
            _ => self.act(format!("take {name}")),
        }
    }
}

fn plan_walkthrough(start: &GameState) -> Result<Vec<String>, WorldError> {
    let mut p = Planner { state: start.clone(), actions: Vec::new() };
    let kitchen = p.state.rooms.iter().position(|r| r.name == KITCHEN).expect("kitchen");
    p.act("look".into())?;
    p.goto(kitchen)?;
    p.act(format!("examine {COOKBOOK}"))?;
    let recipe = p.state.recipe.clone();
    if recipe.iter().any(|(_, need)| is_cut_state(need)) {
        let knife = p.state.object_index(KNIFE).expect("knife");
        p.fetch(knife)?;
    }
    for (obj, _) in &recipe {
        p.fetch(*obj)?;
    }
    for (obj, need) in &recipe {
        let name = p.state.objects[*obj].name.clone();
        if let Some((verb, _)) = CUT_STATES.iter().find(|(_, s)| s == need) {
            p.act(format!("{verb} {name}"))?;
        } else {
            let f = (0..p.state.furniture.len())
                .find(|&f| p.state.furniture[f].kind == Appliance(cook_state_static(need)))
                .expect("recipe only uses present appliances");
            let room = p.state.furniture[f].room;
            let fname = p.state.furniture[f].name.clone();
            p.goto(room)?;
            p.act(format!("cook {name} with {fname}"))?;
        }
    }
    p.goto(kitchen)?;
    p.act("prepare meal".into())?;
    if !p.state.meal_ready {
        return Err(WorldError::InadmissibleAction("prepare meal".into()));
    }
    Ok(p.actions)
}

fn cook_state_static(state: &str) -> &'static str {
    match state {
        "fried" => "fried",
        "roasted" => "roasted",
        _ => "grilled",
    }
}

/// A fresh game world for `seed` without playing it.
pub fn new_game_state(config: &WorldConfig, seed: u64, names: NamePool) -> GameState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    new_world(config, &mut rng, names)
}

/// Builds a game and records its transitions: each walkthrough step followed
/// by `n_random_actions_per_step` random actions taken from the resulting
/// state and rolled back afterwards.
pub fn generate_game(config: &WorldConfig, seed: u64) -> Result<Game, WorldError> {
    generate_game_with(config, seed, 0, NamePool::Any)
}

pub fn generate_game_with(config: &WorldConfig, seed: u64, id: u64, names: NamePool) -> Result<Game, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_attempts {
        let start = new_world(config, &mut rng, names);
        let walkthrough = match plan_walkthrough(&start) {
            Ok(w) => w,
            Err(_) => continue,
        };
        return Ok(record_game(config, &mut rng, start, walkthrough, id, seed));
    }
    Err(WorldError::GenerationFailure { seed, attempts: config.max_attempts })
}

fn record_game(
    config: &WorldConfig,
    rng: &mut ChaCha8Rng,
    start: GameState,
    walkthrough: Vec<String>,
    id: u64,
    seed: u64,
) -> Game {
    let mut transitions = Vec::new();
    let mut full_graphs = Vec::new();
    let mut state = start;
    // Nothing is seen before the first action, matching free-run's empty start.
    let mut seen = BeliefGraph::new();
    let mut record = |t_step: usize, branch: usize, from: &GameState, seen_prev: &BeliefGraph, action: String| {
        let (next, observation) = step(from, &action).expect("admissible by construction");
        let seen_next = observed_subgraph(&next, seen_prev);
        let ops = seen_prev.diff(&seen_next);
        full_graphs.push(next.full_graph());
        transitions.push(Transition {
            game: id,
            step: t_step,
            branch,
            g_seen_prev: seen_prev.clone(),
            action,
            observation,
            g_seen_next: seen_next.clone(),
            ops,
        });
        (next, seen_next)
    };
    for (t, action) in walkthrough.iter().enumerate() {
        let (next, seen_next) = record(t, 0, &state, &seen, action.clone());
        state = next;
        seen = seen_next;
        let mut branch_state = state.clone();
        let mut branch_seen = seen.clone();
        for k in 1..=config.n_random_actions_per_step {
            let options = admissible_actions(&branch_state);
            let action = options[rng.gen_range(0..options.len())].clone();
            let (s, g) = record(t, k, &branch_state, &branch_seen, action);
            if config.random_actions_compound {
                branch_state = s;
                branch_seen = g;
            }
        }
    }
    Game { id, seed, walkthrough, transitions, full_graphs }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "game {} step {}.{}: {} -> {}", self.game, self.step, self.branch, self.action, self.observation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::RelationRegistry;

    fn t(h: &str, tl: &str, r: &str) -> Triple {
        Triple::parse(h, tl, r, &RelationRegistry::default()).unwrap()
    }

    fn quiet() -> WorldConfig {
        WorldConfig { n_random_actions_per_step: 0, ..WorldConfig::default() }
    }

    #[test]
    fn determinism() {
        let cfg = WorldConfig::default();
        let a = generate_game(&cfg, 11).unwrap();
        let b = generate_game(&cfg, 11).unwrap();
        assert_eq!(a.transitions, b.transitions);
        let c = generate_game(&cfg, 12).unwrap();
        assert_ne!(a.transitions, c.transitions);
    }

    #[test]
    fn transition_counts() {
        let g0 = generate_game(&quiet(), 3).unwrap();
        assert_eq!(g0.transitions.len(), g0.walkthrough.len());
        let g5 = generate_game(&WorldConfig::default(), 3).unwrap();
        assert_eq!(g5.transitions.len(), g5.walkthrough.len() * 6);
    }

    #[test]
    fn off_path_branches_do_not_leak() {
        for seed in 0..10 {
            let g0 = generate_game(&quiet(), seed).unwrap();
            let g5 = generate_game(&WorldConfig::default(), seed).unwrap();
            let on: Vec<&Transition> = g5.on_path().collect();
            assert_eq!(on.len(), g0.transitions.len());
            for (a, b) in on.iter().zip(&g0.transitions) {
                assert_eq!(*a, b);
            }
            let compound = WorldConfig { random_actions_compound: true, ..WorldConfig::default() };
            let gc = generate_game(&compound, seed).unwrap();
            assert!(gc.on_path().zip(&g0.transitions).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn corpus_self_consistency() {
        for seed in 0..20 {
            let g = generate_game(&WorldConfig::default(), seed).unwrap();
            let on: Vec<&Transition> = g.on_path().collect();
            for w in on.windows(2) {
                assert_eq!(w[0].g_seen_next, w[1].g_seen_prev);
            }
            for (tr, full) in g.transitions.iter().zip(&g.full_graphs) {
                assert_eq!(tr.g_seen_prev.apply_update(&tr.ops), tr.g_seen_next);
                assert!(tr.g_seen_next.is_subgraph_of(full), "{tr}");
            }
            assert_eq!(g.walkthrough.last().map(String::as_str), Some("prepare meal"));
        }
    }

    #[test]
    fn games_start_unseen_and_first_step_places_player() {
        let g = generate_game(&WorldConfig::default(), 5).unwrap();
        let first = &g.transitions[0];
        assert!(first.g_seen_prev.is_empty());
        assert!(first.g_seen_next.iter().any(|t| t.head.label() == PLAYER && t.relation.label() == "at"));
    }

    #[test]
    fn look_is_always_admissible_and_second_look_is_noop() {
        let s = new_game_state(&WorldConfig::default(), 8, NamePool::Any);
        assert!(admissible_actions(&s).contains(&"look".to_string()));
        let seen0 = BeliefGraph::new();
        let (s1, _) = step(&s, "look").unwrap();
        let seen1 = observed_subgraph(&s1, &seen0);
        assert!(seen1.len() > 1);
        let (s2, obs2) = step(&s1, "look").unwrap();
        let seen2 = observed_subgraph(&s2, &seen1);
        assert!(seen1.diff(&seen2).is_empty());
        assert!(obs2.starts_with("-= "));
    }

    #[test]
    fn every_admissible_action_steps() {
        for seed in 0..5 {
            let g = generate_game(&WorldConfig::default(), seed).unwrap();
            let mut s = new_game_state(&WorldConfig::default(), seed, NamePool::Any);
            // replay the first few walkthrough actions to get varied states
            for a in g.walkthrough.iter().take(6) {
                for opt in admissible_actions(&s) {
                    assert!(step(&s, &opt).is_ok(), "{opt}");
                }
                if step(&s, a).is_err() {
                    break;
                }
                s = step(&s, a).unwrap().0;
            }
        }
        let s = new_game_state(&WorldConfig::default(), 0, NamePool::Any);
        assert!(matches!(step(&s, "fly away"), Err(WorldError::InadmissibleAction(_))));
    }

    fn hand_state() -> GameState {
        // backyard --west--> shed ; shed has a closed toolbox holding a coin
        let mut rooms = vec![
            Room { name: "backyard".into(), exits: BTreeMap::new() },
            Room { name: "shed".into(), exits: BTreeMap::new() },
            Room { name: KITCHEN.into(), exits: BTreeMap::new() },
        ];
        rooms[0].exits.insert(Direction::West, 1);
        rooms[1].exits.insert(Direction::East, 0);
        rooms[0].exits.insert(Direction::North, 2);
        rooms[2].exits.insert(Direction::South, 0);
        let furniture = vec![
            Furniture { name: "toolbox".into(), room: 1, kind: Container, open: false },
            Furniture { name: "workbench".into(), room: 1, kind: Supporter, open: false },
            Furniture { name: "counter".into(), room: 2, kind: Supporter, open: false },
            Furniture { name: "stove".into(), room: 2, kind: Appliance("fried"), open: false },
        ];
        let objects = vec![
            Object { name: COOKBOOK.into(), kind: ObjectKind::Cookbook, placement: Placement::On(2), states: vec![] },
            Object { name: KNIFE.into(), kind: ObjectKind::Knife, placement: Placement::On(1), states: vec![] },
            Object { name: "red apple".into(), kind: ObjectKind::Food, placement: Placement::Inventory, states: vec![] },
            Object { name: "white onion".into(), kind: ObjectKind::Food, placement: Placement::Inventory, states: vec![] },
            Object { name: "yellow potato".into(), kind: ObjectKind::Food, placement: Placement::Inventory, states: vec![] },
            Object { name: "coin".into(), kind: ObjectKind::Item, placement: Placement::In(0), states: vec![] },
        ];
        GameState {
            rooms,
            furniture,
            objects,
            player_room: 0,
            recipe: vec![(2, "sliced".into()), (3, "diced".into()), (4, "fried".into())],
            recipe_read: false,
            meal_ready: false,
            traversed: BTreeSet::new(),
            observed: false,
        }
    }

    #[test]
    fn go_into_shed_reveals_room_and_relocates_player() {
        let s = hand_state();
        let seen0 = BeliefGraph::new();
        let (s1, _) = step(&s, "look").unwrap();
        let seen1 = observed_subgraph(&s1, &seen0);
        let (s2, obs) = step(&s1, "go west").unwrap();
        let seen2 = observed_subgraph(&s2, &seen1);
        let ops = seen1.diff(&seen2);
        let rendered: Vec<String> = ops.iter().map(crate::dsl::render_op).collect();
        assert!(rendered.contains(&"add ( player , shed , at )".to_string()));
        assert!(rendered.contains(&"add ( shed , backyard , west_of )".to_string()));
        assert!(rendered.contains(&"add ( toolbox , shed , at )".to_string()));
        assert!(rendered.contains(&"add ( toolbox , closed , is )".to_string()));
        assert!(rendered.contains(&"add ( workbench , shed , at )".to_string()));
        assert!(rendered.contains(&"delete ( player , backyard , at )".to_string()));
        assert!(obs.contains("shed") && obs.contains("toolbox"));
        assert!(!obs.contains("backyard"), "{obs}");
        // contents of the closed toolbox stay unseen until opened
        assert!(!seen2.contains(&t("coin", "toolbox", "in")));
        let (s3, obs3) = step(&s2, "open toolbox").unwrap();
        assert!(obs3.contains("coin"));
        let seen3 = observed_subgraph(&s3, &seen2);
        assert!(seen3.contains(&t("coin", "toolbox", "in")));
        assert!(admissible_actions(&s3).contains(&"close toolbox".to_string()));
        assert!(!admissible_actions(&s3).contains(&"open toolbox".to_string()));
        assert!(!admissible_actions(&s2).contains(&"close toolbox".to_string()));
        assert!(admissible_actions(&s2).contains(&"open toolbox".to_string()));
    }

    #[test]
    fn one_go_per_exit() {
        let s = hand_state();
        let gos: Vec<String> = admissible_actions(&s).into_iter().filter(|a| a.starts_with("go ")).collect();
        assert_eq!(gos, vec!["go north", "go west"]);
    }

    #[test]
    fn prepare_consumes_ingredients_silently() {
        let mut s = hand_state();
        s.observed = true;
        s.player_room = 2;
        s.objects[2].states.push("sliced".into());
        s.objects[3].states.push("diced".into());
        s.objects[4].states.push("fried".into());
        let (s, _) = step(&s, "examine cookbook").unwrap();
        let seen = observed_subgraph(&s, &BeliefGraph::new());
        assert!(seen.contains(&t("red apple", "recipe", "part_of")));
        assert!(admissible_actions(&s).contains(&"prepare meal".to_string()));
        let (s2, obs) = step(&s, "prepare meal").unwrap();
        let seen2 = observed_subgraph(&s2, &seen);
        let ops = seen.diff(&seen2);
        let placement_deletes = ops
            .iter()
            .filter(|o| o.verb == crate::graph::Verb::Delete && o.triple.relation.label() == "in" && o.triple.tail.label() == PLAYER)
            .count();
        assert_eq!(placement_deletes, 3);
        assert!(seen2.contains(&t("meal", "player", "in")));
        for name in ["red apple", "white onion", "yellow potato", "recipe"] {
            assert!(!obs.contains(name), "{obs}");
        }
        assert!(obs.contains("meal"));
    }

    #[test]
    fn full_exploration_converges_to_full_graph() {
        let s = hand_state();
        let mut seen = BeliefGraph::new();
        let mut st = s;
        for a in ["look", "go west", "open toolbox", "go east", "go north", "examine cookbook", "go south"] {
            let (n, _) = step(&st, a).unwrap();
            seen = observed_subgraph(&n, &seen);
            st = n;
        }
        assert_eq!(seen, st.full_graph());
    }

    #[test]
    fn held_out_names_split_by_combination() {
        let cfg = WorldConfig::default();
        let train = candidate_names(&cfg.adjectives, &cfg.food_nouns, NamePool::Train);
        let test = candidate_names(&cfg.adjectives, &cfg.food_nouns, NamePool::Test);
        assert!(!test.is_empty());
        assert!(train.iter().all(|n| !test.contains(n)));
    }

    #[test]
    fn config_from_toml() {
        let cfg = WorldConfig::from_toml("n_rooms = 3\nn_random_actions_per_step = 2\n").unwrap();
        assert_eq!(cfg.n_rooms, 3);
        assert_eq!(cfg.recipe_length, 2);
        assert!(WorldConfig::from_toml("n_rooms = 0").is_err());
        assert!(WorldConfig::from_toml("bogus = 1").is_err());
        assert!(WorldConfig::from_toml("rooms = [\"moon base\"]").is_err());
    }
}
