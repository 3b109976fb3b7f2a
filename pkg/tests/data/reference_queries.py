"""Query strings quoted in the source material, used as a parser corpus."""

PEOPLE = (
    'db.people.aggregate([{$group: { _id:"$Country", count:{$sum: 1}} }, '
    '{$project:{ Country: "$_id", count:1, _id:0  }}]);'
)
TRAIN = 'db.train.find({},{"Name":1,"Time":1,"Service":1,"_id": 0});'
REF_COLORS = (
    'db.Ref_Colors.aggregate([{$unwind:"$Products"},{$group: {_id:null,count:{$sum:1}}},'
    '{$project:{_id:0, count:1}}]);'
)

_STAGES = (
    '{ $unwind: "$Courses" }, '
    '{ $unwind: "$Courses.Student_Course_Enrolment" }, '
    '{  $unwind: "$Courses.Student_Course_Enrolment.Student_Tests_Taken" }, '
    '{ $match: { "Courses.Student_Course_Enrolment.Student_Tests_Taken.test_result": "Fail" } }, '
)
CASE_GOLD = (
    "db.Subjects.aggregate([ " + _STAGES
    + '{ $project: { date_of_completion: "$Courses.Student_Course_Enrolment.date_of_completion", _id: 0 } } ]);'
)
CASE_RAG = (
    "db.Subjects.aggregate([ " + _STAGES
    + '{ $project: { _id: 0, date_test_taken: '
    '"$Courses.Student_Course_Enrolment.Student_Tests_Taken.date_test_taken" } } ]);'
)
CASE_LLAMA = CASE_GOLD.replace("db.Subjects.", "db.Courses.")
CASE_SMART = CASE_GOLD

RESTAURANT = 'db.Restaurant.find({ "ResName": "Subway" }, { "Address": 1, "_id": 0 });'
STAFF = 'db.Staff.find( { email_address: { $regex: "wrau", $options: "i" } }, { last_name: 1, _id: 0 } );'
FACULTY = 'db.Faculty.find( { "Course.CName": "COMPUTER LITERACY" }, { "Fname": 1, "Lname": 1, "_id": 0 } );'
PILOT = (
    'db.pilot.aggregate([ { $group: { _id: "$Nationality", count: { $sum: 1 } } }, '
    '{ $sort: { count: -1 } }, { $limit: 1 }, { $project: { _id: 0, Nationality: "$_id" } } ]);'
)
COMPANY = (
    'db.company.aggregate([ { $lookup: { from: "gas_station", localField: "Company_ID", '
    'foreignField: "station_company.Company_ID", as: "Docs1" } }, '
    '{ $match: { Docs1: { $size: 0 } } }, { $project: { Company: 1, Main_Industry: 1, _id: 0 } } ]);'
)
DEPARTMENTS = (
    'db.departments.aggregate([ { $unwind: "$employees" }, { $lookup: { from: "regions", '
    'let: { location_id: "$LOCATION_ID" }, pipeline: [ { $unwind: "$countries" }, '
    '{ $unwind: "$countries.locations" }, { $match: { $expr: { $eq: '
    '["$countries.locations.LOCATION_ID", "$$location_id"] } } }, '
    '{ $project: { COUNTRY_NAME: "$countries.COUNTRY_NAME" } } ], as: "Docs1" } }, '
    '{ $unwind: "$Docs1" }, { $project: { FIRST_NAME: "$employees.FIRST_NAME", '
    'LAST_NAME: "$employees.LAST_NAME", EMPLOYEE_ID: "$employees.EMPLOYEE_ID", '
    'COUNTRY_NAME: "$Docs1.COUNTRY_NAME", _id: 0 } } ]);'
)
# Converter output row of the hard find case; exercises quoted keys and the
# long $unwind form with preserveNullAndEmptyArrays.
CONVERTED_FACULTY = (
    'db.COURSE.aggregate([{ "$match": { "CName": "COMPUTER LITERACY" } },{ "$lookup": '
    '{ "from": "FACULTY", "let": { "instructor": "$Instructor" }, "pipeline": [ { "$match": '
    '{ "$expr": { "$eq": [ "$$instructor", "$FacID" ] } } } ], "as": "T2" } },{ "$unwind": '
    '{ "path": "$T2", "preserveNullAndEmptyArrays": false } },{ "$project": { "_id": 0, '
    '"T2.Fname": 1, "T2.Lname": 1 } }])'
)

CORPUS = {
    "people": PEOPLE,
    "train": TRAIN,
    "ref_colors": REF_COLORS,
    "case_gold": CASE_GOLD,
    "case_rag": CASE_RAG,
    "case_llama": CASE_LLAMA,
    "case_smart": CASE_SMART,
    "restaurant": RESTAURANT,
    "staff": STAFF,
    "faculty": FACULTY,
    "pilot": PILOT,
    "company": COMPANY,
    "departments": DEPARTMENTS,
    "converted_faculty": CONVERTED_FACULTY,
}
