"""Seeded generator for small schema-guided dialogue corpora.

Produces services in the shape of the SGD schema files, templated
dialogues whose extractive values appear verbatim in user turns, a plain
text corpus with planted recurring spans for span-selection pre-training,
and paraphrased schema variants for robustness runs.
"""

from __future__ import annotations

import random

from .schema_input import (
    DONTCARE, NONE_INTENT, Dialogue, DialogueState, Intent, ServiceSchema, Slot, Turn,
)

CITIES = ["Long Beach, CA", "San Francisco", "New York", "Seattle", "Portland", "San Diego",
          "Chicago", "Denver", "Austin", "Boston", "Las Vegas", "Phoenix", "Sacramento", "Fresno"]
DATES = ["March 3rd", "next Monday", "the 14th of May", "tomorrow", "Friday", "June 21st",
         "this weekend", "April 9th"]
TIMES = ["6 pm", "half past seven", "10 am", "noon", "8:30 pm", "quarter to five"]
CUISINES = ["thai", "italian", "sushi", "mexican food", "korean barbecue", "vegetarian"]
MOVIES = ["the silent ocean", "night train", "star harbor", "little wolves", "red canyon"]
ARTISTS = ["the blue notes", "maria lopez", "echo valley", "the night owls", "sam carter"]

# Each slot: name, description paraphrases, categorical values (None if extractive),
# value pool, mention templates, system question.
SERVICE_TEMPLATES = [
    {
        "name": "Flights",
        "intents": [
            ("SearchOnewayFlight", ["find a one way flight", "look up single leg air travel", "search one direction plane tickets"], "find a one way flight"),
            ("SearchRoundtripFlights", ["find round trip flights", "look for return journey flights", "search flights there and back"], "find a round trip flight"),
            ("ReserveOnewayFlight", ["book a one way flight", "reserve a single direction plane seat", "purchase a one way ticket"], "book a one way flight"),
            ("ReserveRoundtripFlights", ["book round trip flights", "reserve flights there and back", "purchase a return ticket"], "book a round trip flight"),
        ],
        "slots": [
            ("origin_city", ["city the flight departs from", "starting city of the trip", "where the journey begins"], None, CITIES, ["from {v}", "leaving {v}"], "where are you flying from ?"),
            ("destination_city", ["city the flight arrives in", "arrival city of the trip", "where the journey ends"], None, CITIES, ["to {v}", "going to {v}"], "where are you flying to ?"),
            ("departure_date", ["date of the outbound flight", "day the trip starts", "when the plane leaves"], None, DATES, ["on {v}", "departing {v}"], "what day do you want to leave ?"),
            ("seating_class", ["cabin class of the seat", "type of seat on the plane", "fare category"], ["economy", "premium economy", "business"], None, ["in {v}", "{v} seats"], "which cabin class ?"),
            ("airlines", ["preferred airline company", "carrier operating the flight", "airline to fly with"], ["united", "delta", "alaska"], None, ["with {v}", "on {v} airlines"], "any airline preference ?"),
            ("number_of_tickets", ["how many tickets to buy", "count of seats needed", "number of passengers"], ["1", "2", "3", "4"], None, ["for {v} people", "{v} tickets"], "how many tickets ?"),
        ],
    },
    {
        "name": "Restaurants",
        "intents": [
            ("FindRestaurants", ["search for a restaurant", "look up places to eat", "discover dining spots"], "find a restaurant"),
            ("ReserveRestaurant", ["book a table at a restaurant", "reserve seating for a meal", "make a dinner reservation"], "book a table"),
            ("GetReviews", ["read reviews of a restaurant", "check what diners say", "see ratings for a place"], "read some reviews"),
        ],
        "slots": [
            ("city", ["city where the restaurant is", "town to dine in", "location of the eatery"], None, CITIES, ["in {v}", "near {v}"], "which city ?"),
            ("cuisine", ["type of food served", "style of cooking", "kind of dishes"], None, CUISINES, ["serving {v}", "for {v}"], "what kind of food ?"),
            ("time", ["time of the reservation", "hour to arrive", "when to be seated"], None, TIMES, ["at {v}", "around {v}"], "what time ?"),
            ("price_range", ["how expensive the place is", "cost level of the meal", "budget category"], ["cheap", "moderate", "expensive"], None, ["something {v}", "{v} prices"], "what price range ?"),
            ("party_size", ["number of diners", "how many people are eating", "size of the group"], ["1", "2", "3", "4", "5", "6"], None, ["for {v}", "table of {v}"], "how many people ?"),
            ("has_live_music", ["whether there is live music", "if musicians perform", "live entertainment available"], ["yes", "no"], None, ["live music {v}", "{v} to live music"], "do you want live music ?"),
        ],
    },
    {
        "name": "Hotels",
        "intents": [
            ("SearchHotel", ["search for a hotel", "look up places to stay", "find lodging"], "find a hotel"),
            ("ReserveHotel", ["book a hotel room", "reserve accommodation", "secure a room for the night"], "book a room"),
        ],
        "slots": [
            ("location", ["city of the hotel", "where to stay", "town for lodging"], None, CITIES, ["in {v}", "around {v}"], "where do you want to stay ?"),
            ("check_in_date", ["date of arrival at the hotel", "first night of the stay", "when the stay begins"], None, DATES, ["from {v}", "checking in {v}"], "when do you check in ?"),
            ("number_of_rooms", ["how many rooms to reserve", "count of rooms", "rooms needed"], ["1", "2", "3"], None, ["{v} rooms", "for {v} rooms"], "how many rooms ?"),
            ("star_rating", ["quality rating of the hotel", "number of stars", "hotel class"], ["2", "3", "4", "5"], None, ["{v} stars", "rated {v} stars"], "what star rating ?"),
            ("has_wifi", ["whether wifi is offered", "internet availability", "if there is wireless internet"], ["yes", "no"], None, ["wifi {v}", "{v} on wifi"], "do you need wifi ?"),
        ],
    },
    {
        "name": "RentalCars",
        "intents": [
            ("GetCarsAvailable", ["find available rental cars", "look up cars to hire", "search vehicles for rent"], "rent a car"),
            ("ReserveCar", ["book a rental car", "reserve a vehicle", "hire a car"], "reserve a car"),
        ],
        "slots": [
            ("pickup_location", ["place to collect the car", "where the rental starts", "pickup city"], None, CITIES, ["in {v}", "picking up in {v}"], "where will you pick it up ?"),
            ("pickup_date", ["date to collect the car", "first day of the rental", "when the rental starts"], None, DATES, ["on {v}", "starting {v}"], "what day ?"),
            ("pickup_time", ["time to collect the car", "hour of pickup", "when to get the keys"], None, TIMES, ["at {v}", "around {v}"], "what time ?"),
            ("car_type", ["category of vehicle", "size of the car", "kind of car"], ["compact", "standard", "suv"], None, ["a {v}", "{v} car"], "what type of car ?"),
        ],
    },
    {
        "name": "Movies",
        "intents": [
            ("FindMovies", ["search for movies showing", "look up films in theaters", "find what is playing"], "find a movie"),
            ("BuyMovieTickets", ["buy tickets for a movie", "purchase cinema seats", "get film tickets"], "buy movie tickets"),
            ("GetTimesForMovie", ["get show times for a movie", "check screening times", "find when a film plays"], "check show times"),
        ],
        "slots": [
            ("location", ["city of the theater", "where to watch", "town of the cinema"], None, CITIES, ["in {v}", "near {v}"], "which city ?"),
            ("movie_name", ["title of the movie", "name of the film", "film to watch"], None, MOVIES, ["for {v}", "called {v}"], "which movie ?"),
            ("show_date", ["date of the screening", "day to watch", "when the show is"], None, DATES, ["on {v}", "for {v}"], "what day ?"),
            ("genre", ["kind of movie", "film category", "style of film"], ["comedy", "drama", "horror", "action"], None, ["a {v}", "some {v}"], "what genre ?"),
            ("number_of_tickets", ["how many tickets", "count of seats", "number of viewers"], ["1", "2", "3", "4"], None, ["{v} tickets", "for {v} people"], "how many tickets ?"),
        ],
    },
    {
        "name": "Events",
        "intents": [
            ("FindEvents", ["find concerts or games", "look up live events", "search happenings"], "find an event"),
            ("BuyEventTickets", ["buy tickets for an event", "purchase event passes", "get seats for a show"], "buy event tickets"),
        ],
        "slots": [
            ("city_of_event", ["city where the event is", "town hosting the show", "event location"], None, CITIES, ["in {v}", "around {v}"], "which city ?"),
            ("date", ["date of the event", "day of the show", "when it happens"], None, DATES, ["on {v}", "for {v}"], "what date ?"),
            ("event_name", ["name of the performer or team", "who is playing", "headline act"], None, ARTISTS, ["to see {v}", "featuring {v}"], "who do you want to see ?"),
            ("category", ["kind of event", "type of happening", "event category"], ["music", "sports", "theater"], None, ["some {v}", "a {v} event"], "what kind of event ?"),
        ],
    },
]


def _build_service(tpl, suffix, rng: random.Random, variant: int = 0):
    n_int = rng.randint(2, min(4, len(tpl["intents"])))
    n_slot = rng.randint(3, min(6, len(tpl["slots"])))
    intents = rng.sample(tpl["intents"], n_int)
    slots = rng.sample(tpl["slots"], n_slot)
    # Ensure a mix of categorical and extractive slots.
    if all(s[2] is None for s in slots) or all(s[2] is not None for s in slots):
        want_cat = all(s[2] is None for s in slots)
        pool = [s for s in tpl["slots"] if (s[2] is not None) == want_cat and s not in slots]
        if pool:
            slots[-1] = rng.choice(pool)
    intents.sort(key=tpl["intents"].index)
    slots.sort(key=tpl["slots"].index)
    return intents, slots


def _schema(name, intents, slots, variant=0) -> ServiceSchema:
    return ServiceSchema(
        service_name=name,
        intents=[Intent(n, descs[variant % len(descs)]) for n, descs, _ in intents],
        slots=[Slot(n, descs[variant % len(descs)], cat is not None, list(cat or []))
               for n, descs, cat, *_ in slots],
    )


def _pick_value(slot, rng, used):
    _, _, cat, pool, *_ = slot
    choices = [v for v in (cat or pool) if v not in used]
    return rng.choice(choices or (cat or pool))


def _mention(slot, value, rng):
    return rng.choice(slot[4]).format(v=value)


def _dialogue(did, svc_name, intents, slots, rng: random.Random) -> Dialogue:
    turns = []
    state = DialogueState(NONE_INTENT, {})

    def user(text):
        turns.append(Turn("user", text, {svc_name: DialogueState(state.active_intent, dict(state.slot_values))}))

    def system(text):
        turns.append(Turn("system", text))

    if rng.random() < 0.25:
        user(rng.choice(["hi there , i need some help .", "hello , can you help me ?", "hey , good morning ."]))
        system(rng.choice(["sure , what can i do for you ?", "of course , what do you need ?"]))

    name, _, phrase = rng.choice(intents)
    k = rng.randint(2, min(4, len(slots)))
    targets = rng.sample(slots, k)
    used = set()
    values = {}
    for s in targets:
        v = _pick_value(s, rng, used)
        used.add(v)
        values[s[0]] = v
    dontcare = None
    if k >= 3 and rng.random() < 0.3:
        dontcare = targets[-1][0]

    state.active_intent = name
    first = rng.randint(1, min(2, k))
    opening = [_mention(s, values[s[0]], rng) for s in targets[:first]]
    for s in targets[:first]:
        state.slot_values[s[0]] = values[s[0]]
    user(f"i want to {phrase} " + " ".join(opening) + " .")
    for s in targets[first:]:
        system(s[5])
        if s[0] == dontcare:
            state.slot_values[s[0]] = DONTCARE
            user(rng.choice(["i do n't care .", "any is fine .", "it does not matter ."]))
        else:
            state.slot_values[s[0]] = values[s[0]]
            user(rng.choice(["", "i would like ", "make it "]) + _mention(s, values[s[0]], rng) + " please .")
    if len(intents) > 1 and rng.random() < 0.4:
        other = rng.choice([i for i in intents if i[0] != name])
        system("ok , anything else ?")
        state.active_intent = other[0]
        user(f"yes , now i want to {other[2]} .")
    elif rng.random() < 0.5:
        system("is there anything else ?")
        user(rng.choice(["no , that is all .", "nope , thanks ."]))
    return Dialogue(did, [svc_name], turns)


def _rss_document(rng: random.Random) -> str:
    pools = [CITIES, DATES, TIMES, CUISINES, MOVIES, ARTISTS]
    planted = [rng.choice(rng.choice(pools)) for _ in range(rng.randint(1, 3))]
    fillers = ["many people visit {v} every year .", "we talked about {v} for a long time .",
               "the plan mentioned {v} twice .", "nobody expected {v} to be so popular .",
               "my friend recommended {v} to me .", "after lunch we went back to {v} .",
               "the guide said {v} was the best choice .", "everyone agreed on {v} in the end ."]
    sentences = []
    for v in planted:
        for tpl in rng.sample(fillers, rng.randint(2, 3)):
            sentences.append(tpl.format(v=v))
    rng.shuffle(sentences)
    return " ".join(sentences)


def gen_synth(seed: int, n_services: int, n_dialogues: int, n_documents: int | None = None):
    """Return ``(schemas, dialogues, rss_corpus)``.

    Service templates are reused with a numeric suffix once exhausted;
    dialogues are spread round-robin over services.
    """
    if n_services < 1 or n_dialogues < 1:
        raise ValueError("n_services and n_dialogues must be >= 1")
    rng = random.Random(seed)
    services = []
    for i in range(n_services):
        tpl = SERVICE_TEMPLATES[i % len(SERVICE_TEMPLATES)]
        suffix = i // len(SERVICE_TEMPLATES) + 1
        intents, slots = _build_service(tpl, suffix, rng)
        services.append((f"{tpl['name']}_{suffix}", intents, slots))
    schemas = [_schema(n, it, sl) for n, it, sl in services]
    dialogues = []
    for j in range(n_dialogues):
        name, intents, slots = services[j % n_services]
        dialogues.append(_dialogue(f"synth_{seed}_{j:05d}", name, intents, slots, rng))
    n_documents = 2 * n_dialogues if n_documents is None else n_documents
    corpus = [_rss_document(rng) for _ in range(n_documents)]
    return schemas, dialogues, corpus


def schema_variant(seed: int, n_services: int, variant: int) -> list[ServiceSchema]:
    """The schemas of ``gen_synth(seed, n_services, ...)`` with paraphrased descriptions.

    ``variant=0`` reproduces the original descriptions.
    """
    rng = random.Random(seed)
    out = []
    for i in range(n_services):
        tpl = SERVICE_TEMPLATES[i % len(SERVICE_TEMPLATES)]
        suffix = i // len(SERVICE_TEMPLATES) + 1
        intents, slots = _build_service(tpl, suffix, rng)
        out.append(_schema(f"{tpl['name']}_{suffix}", intents, slots, variant))
    return out
